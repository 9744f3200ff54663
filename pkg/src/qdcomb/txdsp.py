"""Transmitter: PRBS data, QAM mapping, raised-cosine shaping, PDM emulation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ValidationError

# feedback taps (n, k) of x^n + x^k + 1, maximal length
PRBS_TAPS = {7: 6, 9: 5, 11: 2, 15: 14, 23: 18, 31: 28}


@dataclass(frozen=True)
class ConstellationSpec:
    """Gray-mapped square QAM alphabet with unit average energy.

    ``points[label]`` is the symbol whose bits are the binary digits of
    ``label``, most significant bit first. ``levels`` are the per-axis
    amplitudes used for fast nearest-point slicing.
    """

    name: str
    points: np.ndarray = field(repr=False)
    bits_per_symbol: int
    levels: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.points.size

    @property
    def max_magnitude(self):
        return float(np.abs(self.points).max())

    def nearest_labels(self, symbols):
        """Label of the nearest point for every symbol (per-axis slicing)."""
        symbols = np.asarray(symbols)
        i_idx = _slice_axis(symbols.real, self.levels)
        q_idx = _slice_axis(symbols.imag, self.levels)
        return self._label_grid[i_idx, q_idx]

    def nearest_points(self, symbols):
        return self.points[self.nearest_labels(symbols)]

    @property
    def _label_grid(self):
        return _label_grid(self.name)


def _slice_axis(values, levels):
    step = levels[1] - levels[0]
    idx = np.rint((values - levels[0]) / step)
    return np.clip(idx, 0, levels.size - 1).astype(np.intp)


@lru_cache(maxsize=None)
def _label_grid(name):
    spec = constellation(name)
    grid = np.empty((spec.levels.size, spec.levels.size), dtype=np.intp)
    for label, p in enumerate(spec.points):
        i = int(np.argmin(np.abs(spec.levels - p.real)))
        q = int(np.argmin(np.abs(spec.levels - p.imag)))
        grid[i, q] = label
    return grid


def _gray_pam(bits_per_axis):
    """PAM level index (0 = most negative) for every Gray-coded bit group."""
    m = 1 << bits_per_axis
    gray = np.arange(m) ^ (np.arange(m) >> 1)
    level_of = np.empty(m, dtype=int)
    level_of[gray] = np.arange(m)
    return level_of


@lru_cache(maxsize=None)
def constellation(name: str) -> ConstellationSpec:
    """``"QPSK"`` or ``"16QAM"``."""
    key = name.upper()
    if key == "QPSK":
        bpa = 1
    elif key == "16QAM":
        bpa = 2
    else:
        raise ValidationError(f"unsupported modulation {name!r}")
    m_axis = 1 << bpa
    raw_levels = 2.0 * np.arange(m_axis) - (m_axis - 1)
    level_of = _gray_pam(bpa)
    labels = np.arange(1 << (2 * bpa))
    i_bits = labels >> bpa
    q_bits = labels & (m_axis - 1)
    points = raw_levels[level_of[i_bits]] + 1j * raw_levels[level_of[q_bits]]
    if key == "QPSK":
        # 0 -> +1 so that 00 sits in the first quadrant
        points = -points
    norm = np.sqrt(np.mean(np.abs(points) ** 2))
    points = points / norm
    points.setflags(write=False)
    levels = raw_levels / norm
    levels.setflags(write=False)
    return ConstellationSpec(key, points, 2 * bpa, levels)


@dataclass(frozen=True)
class PulseShape:
    rolloff: float = 0.05
    span: int = 64
    samples_per_symbol: int = 4

    def __post_init__(self):
        if not 0 < self.rolloff <= 1:
            raise ValidationError("rolloff must be in (0, 1]")
        if self.span < 16:
            raise ValidationError("span must be >= 16 symbols")
        if self.samples_per_symbol < 2:
            raise ValidationError("samples_per_symbol must be >= 2")

    def occupied_bandwidth(self, symbol_rate):
        return (1 + self.rolloff) * symbol_rate

    def impulse_response(self):
        """Raised-cosine taps, unit value at the centre, ``span * sps + 1`` long."""
        sps = self.samples_per_symbol
        t = np.arange(-self.span * sps // 2, self.span * sps // 2 + 1) / sps
        beta = self.rolloff
        denom = 1.0 - (2.0 * beta * t) ** 2
        singular = np.isclose(denom, 0.0)
        h = np.sinc(t) * np.cos(np.pi * beta * t) / np.where(singular, 1.0, denom)
        h[singular] = np.pi / 4 * np.sinc(1 / (2 * beta))
        return h


@dataclass(frozen=True)
class DualPolWaveform:
    x_pol: np.ndarray = field(repr=False)
    y_pol: np.ndarray = field(repr=False)
    sample_rate: float
    symbol_rate: float

    def __post_init__(self):
        x = np.asarray(self.x_pol, dtype=complex)
        y = np.asarray(self.y_pol, dtype=complex)
        if x.shape != y.shape or x.ndim != 1:
            raise ValidationError("polarizations must be equal-length 1-D arrays")
        if not (self.sample_rate > 0 and self.symbol_rate > 0):
            raise ValidationError("rates must be positive")
        object.__setattr__(self, "x_pol", x)
        object.__setattr__(self, "y_pol", y)

    @property
    def n_samples(self):
        return self.x_pol.size

    @property
    def samples_per_symbol(self):
        return self.sample_rate / self.symbol_rate

    @property
    def duration(self):
        return self.n_samples / self.sample_rate

    def power(self):
        """Total power summed over both polarizations."""
        return float(np.mean(np.abs(self.x_pol) ** 2) + np.mean(np.abs(self.y_pol) ** 2))

    def stack(self):
        return np.vstack([self.x_pol, self.y_pol])

    def with_pols(self, x, y, sample_rate=None):
        return DualPolWaveform(x, y, self.sample_rate if sample_rate is None else sample_rate,
                               self.symbol_rate)


def prbs(order: int = 11, initial_state: int = 0x7FF, n_bits: int = 2047) -> np.ndarray:
    """Maximal-length sequence from ``x^order + x^k + 1`` (k from :data:`PRBS_TAPS`).

    The register is seeded with the low ``order`` bits of ``initial_state``.
    Output bits satisfy ``a[n] = a[n - order + k] ^ a[n - order]``.
    """
    if order not in PRBS_TAPS:
        raise ValidationError(f"unsupported PRBS order {order}")
    mask = (1 << order) - 1
    state = int(initial_state) & mask
    if state == 0:
        raise ValidationError("initial_state must be non-zero in its low bits")
    if n_bits < 0:
        raise ValidationError("n_bits must be non-negative")
    period = (1 << order) - 1
    k = PRBS_TAPS[order]
    seq = np.empty(period + order, dtype=np.uint8)
    seq[:order] = [(state >> i) & 1 for i in range(order)]
    for n in range(order, period + order):
        seq[n] = seq[n - order + k] ^ seq[n - order]
    one_period = seq[:period]
    reps = -(-n_bits // period) if n_bits else 0
    return np.tile(one_period, reps)[:n_bits].copy()


def map_symbols(bits, constellation: ConstellationSpec) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    k = constellation.bits_per_symbol
    if bits.ndim != 1 or bits.size % k:
        raise ValidationError(f"bit count must be a multiple of {k}")
    groups = bits.reshape(-1, k)
    weights = 1 << np.arange(k - 1, -1, -1)
    labels = groups @ weights
    return constellation.points[labels]


def demap_symbols(labels, constellation: ConstellationSpec) -> np.ndarray:
    """Bits (MSB first) of the given point labels."""
    labels = np.asarray(labels)
    k = constellation.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def shape_pulses(symbols, shape: PulseShape) -> np.ndarray:
    """Zero-stuff to ``sps`` and circularly convolve with the raised-cosine taps.

    The result is periodic in the symbol block; symbol ``k`` appears unchanged
    at sample ``k * sps``.
    """
    symbols = np.asarray(symbols, dtype=complex)
    sps = shape.samples_per_symbol
    n = symbols.size * sps
    up = np.zeros(n, dtype=complex)
    up[::sps] = symbols
    h = shape.impulse_response()
    if h.size > n:
        raise ValidationError("symbol block shorter than the pulse span")
    kernel = np.zeros(n)
    half = h.size // 2
    kernel[: half + 1] = h[half:]
    kernel[n - half:] = h[:half]
    return np.fft.ifft(np.fft.fft(up) * np.fft.fft(kernel))


def emulate_pdm(waveform, sample_rate: float, symbol_rate: float,
                decorrelation_delay: float = 5.3e-9) -> DualPolWaveform:
    """Split-delay-combine PDM: y is x cyclically delayed by the given time.

    Each polarization carries the full single-polarization power, so the
    total power of the returned waveform is twice that of the input.
    """
    waveform = np.asarray(waveform, dtype=complex)
    shift = int(round(decorrelation_delay * sample_rate))
    if decorrelation_delay < 0 or shift >= waveform.size / 2:
        raise ValidationError("delay must be non-negative and below half the record")
    return DualPolWaveform(waveform, np.roll(waveform, shift), sample_rate, symbol_rate)


def apply_carrier(waveform: DualPolWaveform, tone, carrier_noise_psd: float = 0.0,
                  seed=None) -> DualPolWaveform:
    """Modulate the tone: multiply by ``exp(j phi(t))``.

    ``carrier_noise_psd`` adds the comb's broadband noise floor (relative to a
    unit-power carrier) to the carrier before modulation.
    """
    record = tone.phase_record
    if record.n_samples < waveform.n_samples:
        raise ValidationError("phase record shorter than the waveform")
    if not np.isclose(record.sample_rate, waveform.sample_rate, rtol=1e-9):
        raise ValidationError("phase record and waveform sample rates differ")
    carrier = np.exp(1j * record.phases[: waveform.n_samples])
    if carrier_noise_psd > 0:
        rng = np.random.default_rng(seed)
        sigma = np.sqrt(carrier_noise_psd * waveform.sample_rate / 2)
        carrier = carrier + sigma * (rng.standard_normal(carrier.size)
                                     + 1j * rng.standard_normal(carrier.size))
    return waveform.with_pols(waveform.x_pol * carrier, waveform.y_pol * carrier)
