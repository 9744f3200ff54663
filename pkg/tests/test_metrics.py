import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qdcomb.errors import AlignmentError, ValidationError
from qdcomb.metrics import (
    DEFAULT_THRESHOLDS,
    ChannelResult,
    FecPolicy,
    aggregate_rates,
    align_and_count,
    compute_evm,
    count_ber,
    fec_classify,
    fec_label,
    parse_fec_label,
    qam16_ber_theory,
    qpsk_ber_theory,
    read_results_csv,
    write_results_csv,
)
from qdcomb.txdsp import constellation, map_symbols, prbs

QPSK = constellation("QPSK")
QAM16 = constellation("16QAM")


def _bits(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, n).astype(np.uint8)


def _awgn(sym, snr_db, rng):
    sigma = math.sqrt(10 ** (-snr_db / 10) / 2)
    return sym + sigma * (rng.standard_normal(sym.size) + 1j * rng.standard_normal(sym.size))


# ----------------------------------------------------------------- BER

def test_identical_streams():
    b = _bits(10**6)
    res = count_ber(b, b)
    assert res.ber == 0 and res.n_errors == 0 and res.n_bits == 10**6
    assert res.below_min_countable


def test_single_flip():
    b = _bits(10**6)
    r = b.copy()
    r[123_456] ^= 1
    res = count_ber(r, b)
    assert res.ber == pytest.approx(1e-6)
    assert res.n_errors == 1


def test_count_ber_finds_delay():
    b = _bits(50_000, 1)
    r = np.roll(b, 777)
    r[:40] ^= 1
    res = count_ber(r, b)
    assert res.delay == 777
    assert res.n_errors == 40
    assert not res.below_min_countable


@settings(max_examples=20, deadline=None)
@given(shift=st.integers(0, 4095), n_err=st.integers(0, 200), seed=st.integers(0, 100))
def test_count_ber_symmetric(shift, n_err, seed):
    b = _bits(4096, seed)
    r = np.roll(b, shift)
    r[np.random.default_rng(seed).choice(4096, n_err, replace=False)] ^= 1
    assert count_ber(r, b).n_errors == count_ber(b, r).n_errors == n_err


def test_count_ber_errors():
    with pytest.raises(ValidationError):
        count_ber(np.zeros(10), np.zeros(11))
    with pytest.raises(ValidationError):
        count_ber(np.zeros(0), np.zeros(0))
    # unrelated streams: nothing lines up above the correlation floor
    with pytest.raises(AlignmentError):
        count_ber(_bits(20_000, 1), _bits(20_000, 2))


def _tx_pair(spec, n=20_000):
    x = map_symbols(prbs(11, 3, n * spec.bits_per_symbol), spec)
    return np.vstack([x, np.roll(x, 212)])


@pytest.mark.parametrize("spec", [QPSK, QAM16])
@pytest.mark.parametrize("swap", [False, True])
@pytest.mark.parametrize("conj", [False, True])
@pytest.mark.parametrize("quadrant", [0, 1, 2, 3])
def test_alignment_invariances(spec, swap, conj, quadrant):
    tx = _tx_pair(spec)
    rx = tx[::-1] if swap else tx
    rx = np.roll(rx, 1000, axis=1) * 1j**quadrant
    rx = np.conj(rx) if conj else rx
    res = align_and_count(rx, tx, spec)
    assert res.ber.n_errors == 0
    assert res.ber.n_bits == 2 * tx.shape[1] * spec.bits_per_symbol


def test_alignment_discards_edges():
    tx = _tx_pair(QPSK)
    rx = tx.copy()
    rx[:, :10] *= -1  # garbage at the very start
    assert align_and_count(rx, tx, QPSK, discard=10).ber.n_errors == 0
    assert align_and_count(rx, tx, QPSK).ber.n_errors > 0


def test_alignment_rejects_noise():
    tx = _tx_pair(QPSK)
    rng = np.random.default_rng(0)
    rx = rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape)
    with pytest.raises(AlignmentError):
        align_and_count(rx, tx, QPSK)


@pytest.mark.parametrize("spec", [QPSK, QAM16])
def test_slip_segment_confines_cycle_slip(spec):
    tx = _tx_pair(spec)
    rx = tx.copy()
    rx[:, 8192:] *= 1j  # a quarter-turn slip at a segment boundary
    whole = align_and_count(rx, tx, spec)
    seg = align_and_count(rx, tx, spec, slip_segment=1024)
    assert whole.ber.n_errors > 0.2 * whole.ber.n_bits
    assert seg.ber.n_errors == 0
    assert [d["rotation_changes"] for d in seg.per_stream] == [1, 1]
    assert np.array_equal(seg.received, seg.reference)


def test_slip_inside_segment_costs_at_most_half_a_segment():
    tx = _tx_pair(QPSK)
    rx = tx.copy()
    rx[:, 8192 + 300:] *= -1
    res = align_and_count(rx, tx, QPSK, slip_segment=1024)
    # 300 symbols of the 1024-symbol segment are on the minority rotation
    assert res.ber.n_errors == 2 * 300 * 2


def test_slip_segment_equals_frame_wide_without_slips():
    rng = np.random.default_rng(9)
    tx = _tx_pair(QAM16)
    rx = np.vstack([_awgn(r, 14.0, rng) for r in tx]) * 1j
    a = align_and_count(rx, tx, QAM16)
    b = align_and_count(rx, tx, QAM16, slip_segment=2048)
    assert a.ber.n_errors == b.ber.n_errors > 0


def test_slip_segment_validation():
    tx = _tx_pair(QPSK)
    with pytest.raises(ValidationError):
        align_and_count(tx, tx, QPSK, slip_segment=0)


def _measured_qpsk_ber(esn0_db, n, seed):
    rng = np.random.default_rng(seed)
    tx = QPSK.points[rng.integers(0, 4, (2, n))]
    rx = np.vstack([_awgn(row, esn0_db, rng) for row in tx])
    return align_and_count(rx, tx, QPSK).ber


def test_awgn_qpsk_10db():
    ber = _measured_qpsk_ber(10.0, 500_000, 1)
    theory = float(stats.norm.sf(math.sqrt(10.0)))  # Q(sqrt(Es/N0)) for Gray QPSK
    assert theory == pytest.approx(float(qpsk_ber_theory(10.0)), rel=1e-12)
    assert ber.ber == pytest.approx(theory, rel=0.10)


@pytest.mark.parametrize("esn0", [4.0, 7.0, 9.0, 11.0])
def test_awgn_qpsk_curve(esn0):
    # BER from about 1e-2 down to 1e-4
    ber = _measured_qpsk_ber(esn0, 300_000, int(esn0 * 10))
    assert ber.n_errors >= 100
    assert ber.ber == pytest.approx(float(stats.norm.sf(math.sqrt(10 ** (esn0 / 10)))), rel=0.10)


def test_qam16_theory_oracle():
    # exact Gray 16QAM: (3Q(x) + 2Q(3x) - Q(5x)) / 4 with x = sqrt(Es/N0 / 5)
    x = math.sqrt(10 ** (15.0 / 10) / 5)
    q = stats.norm.sf
    exact = (3 * q(x) + 2 * q(3 * x) - q(5 * x)) / 4
    assert float(qam16_ber_theory(15.0)) == pytest.approx(0.75 * q(x), rel=1e-12)
    assert float(qam16_ber_theory(15.0)) == pytest.approx(exact, rel=0.01)


# ----------------------------------------------------------------- EVM

@pytest.mark.parametrize("spec", [QPSK, QAM16])
def test_evm_noiseless(spec):
    assert compute_evm(spec.points, spec) == 0.0
    assert compute_evm(spec.points, spec, reference=spec.points) == 0.0


def test_evm_qpsk_snr20():
    rng = np.random.default_rng(3)
    sym = QPSK.points[rng.integers(0, 4, 400_000)]
    assert compute_evm(_awgn(sym, 20.0, rng), QPSK, sym) == pytest.approx(10.0, rel=0.01)


def test_evm_16qam_factor():
    rng = np.random.default_rng(4)
    q = QPSK.points[rng.integers(0, 4, 400_000)]
    m = QAM16.points[rng.integers(0, 16, 400_000)]
    e_q = compute_evm(_awgn(q, 20.0, rng), QPSK, q)
    e_m = compute_evm(_awgn(m, 20.0, rng), QAM16, m)
    assert e_m / e_q == pytest.approx(math.sqrt(10 / 18), rel=0.01)


def test_evm_decision_directed_matches_reference_at_high_snr():
    rng = np.random.default_rng(5)
    m = QAM16.points[rng.integers(0, 16, 100_000)]
    rx = _awgn(m, 30.0, rng)
    assert compute_evm(rx, QAM16) == pytest.approx(compute_evm(rx, QAM16, m), rel=1e-9)


# ----------------------------------------------------------------- FEC

@pytest.mark.parametrize("ber,expected", [
    (4.6e-3, 0.0625), (4.7e-3, 0.0625), (1.0e-2, 0.20), (1.44e-2, 0.20), (2e-2, None), (0.0, 0.0625),
])
def test_fec_classify(ber, expected):
    assert fec_classify(ber) == expected


def test_default_thresholds():
    assert DEFAULT_THRESHOLDS == ((4.7e-3, 0.0625), (1.44e-2, 0.20))


@given(a=st.floats(0, 0.5), b=st.floats(0, 0.5))
def test_fec_monotone(a, b):
    lo, hi = sorted((a, b))
    c_lo, c_hi = fec_classify(lo), fec_classify(hi)
    if c_hi is not None:
        assert c_lo is not None and c_lo <= c_hi


@pytest.mark.parametrize("thresholds", [((1e-2, 0.2), (1e-3, 0.07)), ((1e-3, 0.0),)])
def test_fec_policy_validation(thresholds):
    with pytest.raises(ValidationError):
        FecPolicy(thresholds)


@pytest.mark.parametrize("value", [None, 0.0, 0.0625, 0.2])
def test_fec_label_round_trip(value):
    assert parse_fec_label(fec_label(value)) == value


# ------------------------------------------------------------ capacity

def _results(classes):
    return [ChannelResult(i, 0.0, 1.0, 100, 0, c) for i, c in enumerate(classes)]


def test_wdm_qpsk_accounting():
    r = aggregate_rates(_results([0.0625] * 52), 40e9, 2)
    assert r.line_rate == pytest.approx(8.32e12, rel=1e-12)
    assert r.net_rate / 1e12 == pytest.approx(7.83, abs=0.005)
    assert r.line_spectral_efficiency == pytest.approx(8.32e12 / (52 * 42e9))
    assert r.line_spectral_efficiency == pytest.approx(3.81, abs=0.005)
    assert r.net_spectral_efficiency == pytest.approx(3.585, abs=0.005)


def test_wdm_16qam_accounting():
    r = aggregate_rates(_results([0.0625] * 32 + [0.20] * 6), 38e9, 4)
    assert r.line_rate / 1e12 == pytest.approx(11.552, abs=1e-9)
    assert r.net_rate / 1e12 == pytest.approx(10.676, abs=0.01)
    assert r.net_spectral_efficiency == pytest.approx(6.69, abs=0.02)
    assert r.class_counts == {"6.25%": 32, "20%": 6}


def test_single_channel_no_fec():
    r = aggregate_rates(_results([0.0]), 1e9, 2, n_polarizations=1)
    assert r.line_rate == r.net_rate == 2e9


def test_failed_channels_add_nothing():
    r = aggregate_rates(_results([None, 0.0625]), 40e9, 2)
    assert r.net_rate == pytest.approx(160e9 / 1.0625)
    assert r.class_counts["fail"] == 1


def test_policy_reclassifies():
    res = [ChannelResult(0, 0.01, 1.0, 1000, 10, 0.0625)]
    r = aggregate_rates(res, 40e9, 2, policy=FecPolicy())
    assert r.class_counts == {"20%": 1}


def test_empty_accounting():
    r = aggregate_rates([], 40e9, 2)
    assert r.line_rate == r.net_rate == r.net_spectral_efficiency == 0.0


@settings(max_examples=40, deadline=None)
@given(classes=st.lists(st.sampled_from([None, 0.0, 0.0625, 0.2]), min_size=2, max_size=40),
       cut=st.integers(1, 39))
def test_aggregate_additive(classes, cut):
    cut = min(cut, len(classes) - 1)
    res = _results(classes)
    whole = aggregate_rates(res, 38e9, 4)
    a = aggregate_rates(res[:cut], 38e9, 4)
    b = aggregate_rates(res[cut:], 38e9, 4)
    assert whole.line_rate == pytest.approx(a.line_rate + b.line_rate)
    assert whole.net_rate == pytest.approx(a.net_rate + b.net_rate)


# ------------------------------------------------------------------ CSV

def test_channel_result_invariants():
    with pytest.raises(ValidationError):
        ChannelResult(0, 0.5, 1.0, 100, 1, None)
    with pytest.raises(ValidationError):
        ChannelResult(0, 0.01, -1.0, 100, 1, None)


def test_results_csv_round_trip(tmp_path):
    res = [ChannelResult(0, 1 / 3, 12.5, 3, 1, None, 193.4e12),
           ChannelResult(1, 0.0, 0.25, 800_000, 0, 0.0625, 193.442e12),
           ChannelResult(2, 0.01, 7.0, 1000, 10, 0.2, 1.0)]
    path = tmp_path / "r.csv"
    write_results_csv(res, path)
    assert read_results_csv(path) == res
    header = path.read_text().splitlines()[0]
    assert header == ("channel_index,carrier_frequency_hz,ber,evm_percent,"
                      "n_bits_counted,n_errors,fec_class")
