"""BER/EVM measurement, FEC classification and capacity accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import AlignmentError, ValidationError
from .txdsp import ConstellationSpec, demap_symbols

MIN_COUNTABLE_ERRORS = 5
DEFAULT_THRESHOLDS = ((4.7e-3, 0.0625), (1.44e-2, 0.20))
CORRELATION_FLOOR = 0.2


@dataclass(frozen=True)
class FecPolicy:
    """Hard-decision FEC thresholds as ``(ber_threshold, overhead)`` pairs."""

    thresholds: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        th = tuple((float(b), float(o)) for b, o in self.thresholds)
        if any(o <= 0 for _, o in th):
            raise ValidationError("FEC overheads must be positive")
        if any(b2 < b1 for (b1, _), (b2, _) in zip(th, th[1:])):
            raise ValidationError("thresholds must be sorted by ascending BER")
        object.__setattr__(self, "thresholds", th)


def fec_label(overhead) -> str:
    if overhead is None:
        return "fail"
    if overhead == 0:
        return "none"
    return f"{overhead * 100:g}%"


def parse_fec_label(text: str):
    text = text.strip()
    if text == "fail":
        return None
    if text == "none":
        return 0.0
    return float(text.rstrip("%")) / 100.0


@dataclass(frozen=True)
class ChannelResult:
    """Per-channel outcome.

    ``fec_class`` is the FEC overhead fraction the channel qualifies for,
    ``0.0`` when no FEC is applied and ``None`` when it fails every threshold.
    """

    channel_index: int
    ber: float
    evm_percent: float
    n_bits_counted: int
    n_errors: int
    fec_class: float | None
    carrier_frequency: float = 0.0

    def __post_init__(self):
        if self.n_bits_counted > 0 and not math.isclose(
                self.ber, self.n_errors / self.n_bits_counted, rel_tol=1e-12, abs_tol=0.0):
            raise ValidationError("ber must equal n_errors / n_bits_counted")
        if self.evm_percent < 0:
            raise ValidationError("evm must be non-negative")


@dataclass(frozen=True)
class BerCount:
    ber: float
    n_errors: int
    n_bits: int
    delay: int = 0

    @property
    def below_min_countable(self) -> bool:
        """Fewer than 5 errors: the BER is only an upper-bound estimate."""
        return self.n_errors < MIN_COUNTABLE_ERRORS


@dataclass(frozen=True)
class AlignedStreams:
    """Result of genie alignment of received to transmitted symbols."""

    ber: BerCount
    received: np.ndarray = field(repr=False)
    reference: np.ndarray = field(repr=False)
    per_stream: tuple = ()


@dataclass(frozen=True)
class RateSummary:
    line_rate: float
    net_rate: float
    net_spectral_efficiency: float
    line_spectral_efficiency: float
    n_channels: int
    class_counts: dict


def _circular_xcorr(a, b):
    """``c[d] = sum_k a[k] conj(b[k - d])`` for every cyclic shift ``d``."""
    return np.fft.ifft(np.fft.fft(a) * np.conj(np.fft.fft(b)))


def _coherent_delay(r, t):
    """Full-record correlation; cheap and exact when the phase is steady."""
    c = np.abs(_circular_xcorr(r, t))
    d = int(np.argmax(c))
    return float(c[d] / (np.linalg.norm(r) * np.linalg.norm(t) + 1e-300)), d


def _best_hypothesis(r, transmitted):
    """``(score, tx_index, conjugate, delay)`` of the best-correlating hypothesis."""
    hyps = [(ti, conj) for ti in range(len(transmitted)) for conj in (False, True)]

    def search(delay_fn):
        best = None
        for ti, conj in hyps:
            score, d = delay_fn(np.conj(r) if conj else r, transmitted[ti])
            if best is None or score > best[0]:
                best = (score, ti, conj, d)
        return best

    # a slipped or phase-wandering record correlates only in parts; periodic
    # data then gives partial peaks at the wrong delay, so demand near-unity
    best = search(_coherent_delay)
    return best if best[0] >= 0.85 else search(_noncoherent_delay)


def _noncoherent_delay(r, t, n_blocks=16, block=1024):
    """Cyclic delay of ``t`` inside ``r`` from a few block-wise correlations.

    Summing correlation magnitudes over short blocks keeps the peak when the
    residual carrier phase wanders over the record. Returns
    ``(normalized_peak, delay)``; the peak is about 1 for a clean match and
    about ``1/sqrt(block)`` for unrelated data.
    """
    n = r.size
    block = min(block, max(n // n_blocks, 1))
    starts = np.linspace(0, n - block, n_blocks).astype(int) if n > block else np.array([0])
    ft = np.conj(np.fft.fft(t))
    metric = np.zeros(n)
    norm = 0.0
    t_rms = np.sqrt(np.mean(np.abs(t) ** 2))
    for s in np.unique(starts):
        rb = np.zeros(n, dtype=complex)
        rb[s:s + block] = r[s:s + block]
        metric += np.abs(np.fft.ifft(np.fft.fft(rb) * ft))
        norm += np.linalg.norm(rb) * t_rms * np.sqrt(min(block, n))
    d = int(np.argmax(metric))
    return float(metric[d] / (norm + 1e-300)), d


def count_ber(received_bits, transmitted_bits) -> BerCount:
    """Bit errors after the best cyclic delay alignment of two equal-length streams."""
    rx = np.asarray(received_bits, dtype=np.int8)
    tx = np.asarray(transmitted_bits, dtype=np.int8)
    if rx.shape != tx.shape or rx.ndim != 1 or rx.size == 0:
        raise ValidationError("bit streams must be non-empty and of equal length")
    corr = _circular_xcorr(1.0 - 2.0 * rx, 1.0 - 2.0 * tx).real
    delay = int(np.argmax(corr))
    if corr[delay] < CORRELATION_FLOOR * rx.size:
        raise AlignmentError("no delay aligns the bit streams above the correlation floor")
    errors = int(np.count_nonzero(rx != np.roll(tx, delay)))
    return BerCount(errors / rx.size, errors, int(rx.size), delay)


def _demap(sym, constellation):
    return demap_symbols(constellation.nearest_labels(sym), constellation)


def _best_rotation(rr, ref_bits, constellation):
    """Quadrant rotation of ``rr`` with the fewest bit errors against ``ref_bits``."""
    choice = None
    for q in range(4):
        cand = rr * (1j) ** q
        errs = int(np.count_nonzero(_demap(cand, constellation) != ref_bits))
        if choice is None or errs < choice[0]:
            choice = (errs, q, cand)
    return choice


def align_and_count(received, transmitted, constellation: ConstellationSpec,
                    discard: int = 0, slip_segment: int | None = None) -> AlignedStreams:
    """Align received to transmitted symbols and count bit errors.

    For each received stream the search covers the transmitted stream (swap),
    cyclic delay, conjugation and the four quadrant rotations; the alignment
    with the fewest bit errors is kept. ``discard`` symbols are dropped at both
    ends of every stream before counting.

    With ``slip_segment`` the quadrant rotation is chosen afresh for every
    consecutive segment of that many symbols, so a cycle slip costs the errors
    up to the next segment boundary instead of the rest of the frame. Delay,
    swap and conjugation stay frame-wide.
    """
    received = np.atleast_2d(np.asarray(received, dtype=complex))
    transmitted = np.atleast_2d(np.asarray(transmitted, dtype=complex))
    if received.shape != transmitted.shape:
        raise ValidationError("received and transmitted arrays must have equal shapes")
    if slip_segment is not None and slip_segment < 1:
        raise ValidationError("slip_segment must be a positive symbol count")
    n = received.shape[1]
    keep = slice(discard, n - discard)
    bps = constellation.bits_per_symbol
    total_err = total_bits = 0
    rx_out, ref_out, details = [], [], []
    for r in received:
        score, ti, conj, d = _best_hypothesis(r, transmitted)
        if score < CORRELATION_FLOOR:
            raise AlignmentError(f"received stream does not correlate with any transmitted stream "
                                 f"(peak {score:.3f})")
        rr = (np.conj(r) if conj else r)[keep]
        ref = np.roll(transmitted[ti], d)[keep]
        ref_bits = _demap(ref, constellation)
        seg = rr.size if slip_segment is None else int(slip_segment)
        errs, parts, rotations = 0, [], []
        for s in range(0, rr.size, seg):
            e, q, cand = _best_rotation(rr[s:s + seg], ref_bits[s * bps:(s + seg) * bps],
                                        constellation)
            errs += e
            parts.append(cand)
            rotations.append(q)
        cand = np.concatenate(parts) if parts else rr
        total_err += errs
        total_bits += ref_bits.size
        rx_out.append(cand)
        ref_out.append(ref)
        details.append({"tx_stream": ti, "conjugate": conj, "delay": d,
                        "rotation": rotations[0] if rotations else 0,
                        "rotation_changes": int(np.count_nonzero(np.diff(rotations))),
                        "errors": errs, "bits": int(ref_bits.size)})
    ber = BerCount(total_err / total_bits if total_bits else 0.0, total_err, total_bits)
    return AlignedStreams(ber, np.vstack(rx_out), np.vstack(ref_out), tuple(details))


def compute_evm(symbols, constellation: ConstellationSpec, reference=None) -> float:
    """RMS error-vector magnitude in percent, normalized to the largest
    constellation magnitude. Without ``reference`` the nearest points serve as
    the reference (decision-directed)."""
    symbols = np.asarray(symbols, dtype=complex)
    ref = constellation.nearest_points(symbols) if reference is None else np.asarray(reference)
    rms = np.sqrt(np.mean(np.abs(symbols - ref) ** 2))
    return float(100.0 * rms / constellation.max_magnitude)


def fec_classify(ber: float, policy: FecPolicy | None = None):
    """Smallest overhead whose threshold admits ``ber``; ``None`` if none does."""
    policy = policy or FecPolicy()
    ok = [oh for threshold, oh in policy.thresholds if ber <= threshold]
    return min(ok) if ok else None


def aggregate_rates(results, symbol_rate: float, bits_per_symbol: int, n_polarizations: int = 2,
                    policy: FecPolicy | None = None, channel_spacing: float = 42e9) -> RateSummary:
    """Line and net rates summed over channels.

    Net rate per channel is ``line / (1 + overhead)``; failed channels add
    nothing. With a ``policy`` every channel is re-classified from its BER,
    otherwise its stored ``fec_class`` is used. Spectral efficiencies divide by
    ``n_channels * channel_spacing``.
    """
    results = list(results)
    per_channel = symbol_rate * bits_per_symbol * n_polarizations
    line = per_channel * len(results)
    net = 0.0
    counts: dict = {}
    for r in results:
        oh = fec_classify(r.ber, policy) if policy is not None else r.fec_class
        label = fec_label(oh)
        counts[label] = counts.get(label, 0) + 1
        if oh is not None:
            net += per_channel / (1.0 + oh)
    bandwidth = len(results) * channel_spacing
    return RateSummary(
        line_rate=line,
        net_rate=net,
        net_spectral_efficiency=net / bandwidth if bandwidth else 0.0,
        line_spectral_efficiency=line / bandwidth if bandwidth else 0.0,
        n_channels=len(results),
        class_counts=counts,
    )


def qpsk_ber_theory(esn0_db):
    """Gray-coded QPSK bit error rate in AWGN."""
    esn0 = 10 ** (np.asarray(esn0_db, dtype=float) / 10)
    return 0.5 * special.erfc(np.sqrt(esn0 / 2))


def qam16_ber_theory(esn0_db):
    """Gray-coded square 16QAM bit error rate in AWGN (nearest-neighbour approximation)."""
    esn0 = 10 ** (np.asarray(esn0_db, dtype=float) / 10)
    return 0.375 * special.erfc(np.sqrt(esn0 / 10))


RESULT_COLUMNS = (
    "channel_index",
    "carrier_frequency_hz",
    "ber",
    "evm_percent",
    "n_bits_counted",
    "n_errors",
    "fec_class",
)


def result_to_row(result: ChannelResult) -> dict:
    return {
        "channel_index": result.channel_index,
        "carrier_frequency_hz": repr(float(result.carrier_frequency)),
        "ber": repr(float(result.ber)),
        "evm_percent": repr(float(result.evm_percent)),
        "n_bits_counted": result.n_bits_counted,
        "n_errors": result.n_errors,
        "fec_class": fec_label(result.fec_class),
    }


def row_to_result(row: dict) -> ChannelResult:
    return ChannelResult(
        channel_index=int(row["channel_index"]),
        ber=float(row["ber"]),
        evm_percent=float(row["evm_percent"]),
        n_bits_counted=int(row["n_bits_counted"]),
        n_errors=int(row["n_errors"]),
        fec_class=parse_fec_label(row["fec_class"]),
        carrier_frequency=float(row["carrier_frequency_hz"]),
    )


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in results:
            writer.writerow(result_to_row(r))


def read_results_csv(path) -> list[ChannelResult]:
    with open(path, newline="") as fh:
        return [row_to_result(row) for row in csv.DictReader(fh)]
