import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from qdcomb.errors import (
    ApproximationInvalidError,
    FitDegenerateError,
    GridMismatchError,
    InsufficientDataError,
    InvalidModelError,
    NoCrossingError,
    UnreliableEstimateError,
    UnreliableEstimateWarning,
)
from qdcomb.phasenoise import (
    BETA_SEPARATION,
    FmNoiseModel,
    FmSpectrum,
    PhaseRecord,
    PhaseVarianceCurve,
    SmoothingPolicy,
    estimate_fm_spectrum,
    fit_fm_model,
    gaussian_linewidth,
    instantaneous_frequency,
    integration_upper_frequency,
    linewidth_from_variance_slope,
    load_phase_file,
    lorentzian_linewidth,
    phase_variance,
    slow_noise_power,
    smooth_spectrum,
    synthesize_phase,
)

REF_MODEL = FmNoiseModel(5.4e5, 8.4e11, 5.0e17)

# Frozen from an independent oracle: scipy brentq on S(f) - 0.5618 f and
# scipy quad of S(f) over [1/15us, f_high].
ORACLE_FHIGH_REF = 1957276.933754144
ORACLE_DFG_REF_15US = 7847008.171862842
ORACLE_FHIGH_RW = 961873.8115105297
ORACLE_A_RW_15US = 6980181294036.073
ORACLE_DFG_RW_15US = 6221442.266071992


def band_mean(spec, lo, hi):
    sel = (spec.frequencies >= lo) & (spec.frequencies <= hi)
    return spec.psd[sel].mean()


# ----------------------------------------------------------------- model

def test_model_rejects_negative_and_nonfinite():
    with pytest.raises(InvalidModelError):
        FmNoiseModel(-1.0, 0, 0)
    with pytest.raises(InvalidModelError):
        FmNoiseModel(0, math.inf, 0)
    with pytest.raises(ValueError):
        FmNoiseModel(0, 0, math.nan)


def test_model_psd_at_1mhz_is_sum_of_terms():
    assert REF_MODEL.psd(1e6) == pytest.approx(5.4e5 + 8.4e5 + 5.0e5)


# -------------------------------------------------------------- synthesis

def test_degenerate_model_gives_constant_phase():
    rec = synthesize_phase(FmNoiseModel(), 4096, 1e9, seed=1)
    assert np.all(rec.phases == rec.phases[0])
    assert np.all(instantaneous_frequency(rec) == 0)


def test_synthesis_requires_minimum_length():
    with pytest.raises(ValueError):
        synthesize_phase(REF_MODEL, 512, 1e9, seed=0)


def test_synthesis_is_deterministic_per_seed():
    a = synthesize_phase(REF_MODEL, 4096, 2e9, seed=7)
    b = synthesize_phase(REF_MODEL, 4096, 2e9, seed=7)
    c = synthesize_phase(REF_MODEL, 4096, 2e9, seed=8)
    assert np.array_equal(a.phases, b.phases)
    assert not np.array_equal(a.phases, c.phases)


def test_white_synthesis_is_flat_at_s_white():
    rec = synthesize_phase(FmNoiseModel(5.4e5, 0, 0), 2**20, 2e9, seed=3)
    spec = estimate_fm_spectrum(rec)
    for lo, hi in ((1e5, 1e6), (1e6, 1e7), (1e7, 1e8), (1e8, 5e8)):
        assert band_mean(spec, lo, hi) == pytest.approx(5.4e5, rel=0.10)


def test_reference_model_psd_at_1mhz():
    rec = synthesize_phase(REF_MODEL, 2**22, 2e9, seed=4)
    spec = estimate_fm_spectrum(rec)
    assert band_mean(spec, 0.9e6, 1.1e6) == pytest.approx(1.88e6, rel=0.15)


def test_reference_model_spectrum_shape():
    spec = estimate_fm_spectrum(synthesize_phase(REF_MODEL, 2**22, 2e9, seed=5))
    # -2 slope region well below 0.5 MHz, flat region far above
    f1, f2 = 3e4, 1e5
    slope = math.log10(band_mean(spec, f2 * 0.9, f2 * 1.1) / band_mean(spec, f1 * 0.9, f1 * 1.1))
    assert slope / math.log10(f2 / f1) < -1.5
    hi_slope = math.log10(band_mean(spec, 1.8e8, 2.2e8) / band_mean(spec, 1.8e7, 2.2e7))
    assert abs(hi_slope) < 0.05


# ------------------------------------------------- instantaneous frequency

def test_linear_ramp_gives_exact_constant_frequency():
    ts = 1e-9
    k = np.arange(1000)
    rec = PhaseRecord(2 * np.pi * 1e6 * k * ts, ts)
    f = instantaneous_frequency(rec)
    assert f.size == 999
    np.testing.assert_allclose(f, 1e6, rtol=1e-9)


def test_constant_phase_gives_zero_frequency():
    assert np.all(instantaneous_frequency(PhaseRecord(np.full(10, 0.3), 1e-9)) == 0)


def test_sinusoidal_fm_matches_analytic_derivative():
    ts = 1e-6
    amp = 0.01
    k = np.arange(20000)
    rec = PhaseRecord(amp * np.sin(2 * np.pi * 1e3 * k * ts), ts)
    f = instantaneous_frequency(rec)
    # analytic derivative at the midpoint of each step
    t_mid = (k[:-1] + 0.5) * ts
    exact = amp * 1e3 * np.cos(2 * np.pi * 1e3 * t_mid)
    assert np.max(f) == pytest.approx(amp * 1e3, rel=1e-4)
    np.testing.assert_allclose(f, exact, atol=1e-5 * amp * 1e3)


def test_phase_record_needs_two_samples():
    with pytest.raises(InsufficientDataError):
        PhaseRecord(np.zeros(1), 1e-9)


# ------------------------------------------------------ spectrum estimate

def test_white_spectrum_flat_at_1e6():
    spec = estimate_fm_spectrum(synthesize_phase(FmNoiseModel(1e6, 0, 0), 2**20, 1e9, seed=2))
    assert band_mean(spec, 1e6, 1e8) == pytest.approx(1e6, rel=0.10)


def test_zero_noise_spectrum_is_zero():
    spec = estimate_fm_spectrum(PhaseRecord(np.zeros(8192), 1e-9))
    assert np.max(spec.psd) < 1e-20


def test_spectrum_rejects_short_record():
    with pytest.raises(InsufficientDataError):
        estimate_fm_spectrum(PhaseRecord(np.zeros(200), 1e-9))


def test_parseval_white():
    rec = synthesize_phase(FmNoiseModel(1e6, 0, 0), 2**18, 1e9, seed=11)
    spec = estimate_fm_spectrum(rec)
    df = spec.frequencies[1] - spec.frequencies[0]
    assert np.sum(spec.psd) * df == pytest.approx(np.var(instantaneous_frequency(rec)), rel=0.05)


def test_parseval_coloured_within_segments():
    # 1/f^2 power below the first bin is invisible to segment averaging, so
    # compare against the Hann-weighted power inside the half-overlapping segments
    rec = synthesize_phase(REF_MODEL, 2**18, 1e9, seed=11)
    spec = estimate_fm_spectrum(rec)
    df = spec.frequencies[1] - spec.frequencies[0]
    nseg = int(round(rec.sample_rate / df))
    f_inst = instantaneous_frequency(rec)
    w = np.hanning(nseg + 1)[:-1]
    powers = []
    for start in range(0, f_inst.size - nseg + 1, nseg // 2):
        seg = f_inst[start:start + nseg]
        powers.append(np.sum(w**2 * (seg - seg.mean()) ** 2) / np.sum(w**2))
    assert np.sum(spec.psd) * df == pytest.approx(np.mean(powers), rel=0.05)


def test_spectrum_support_bounds():
    rec = synthesize_phase(REF_MODEL, 2**16, 1e9, seed=1)
    spec = estimate_fm_spectrum(rec)
    assert spec.frequencies[0] >= 1 / rec.duration
    assert spec.frequencies[-1] <= rec.sample_rate / 2


# -------------------------------------------------------------- smoothing

def test_smoothing_constant_is_unchanged():
    f = np.linspace(1e3, 1e6, 1000)
    out = smooth_spectrum(FmSpectrum(f, np.full(f.size, 4.0)))
    np.testing.assert_allclose(out.psd, 4.0)


def test_smoothing_reduces_spike_by_window_width():
    f = np.arange(1, 20001) * 100.0
    p = np.ones(f.size)
    i = 15000
    p[i] = 1e4
    policy = SmoothingPolicy(decade_fraction=0.1)
    out = smooth_spectrum(FmSpectrum(f, p), policy)
    r = 10 ** 0.05 - 10 ** -0.05
    width = np.count_nonzero(np.abs(f - f[i]) <= f[i] * r / 2)
    assert out.psd[i] - 1 <= (1e4 - 1) / width + 1e-9
    assert (out.psd[i] - 1) * width == pytest.approx(1e4 - 1, rel=1e-9)


def test_smoothing_preserves_band_power():
    rec = synthesize_phase(REF_MODEL, 2**20, 2e9, seed=12)
    spec = estimate_fm_spectrum(rec)
    sm = smooth_spectrum(spec)
    sel = (spec.frequencies > 1e5) & (spec.frequencies < 1e8)
    assert np.sum(sm.psd[sel]) == pytest.approx(np.sum(spec.psd[sel]), rel=0.05)


def test_smoothed_reference_model_within_3db_of_truth():
    rec = synthesize_phase(REF_MODEL, 2**22, 2e9, seed=13)
    sm = smooth_spectrum(estimate_fm_spectrum(rec))
    lo, hi = 5 / rec.duration, rec.sample_rate / 8
    sel = (sm.frequencies >= lo) & (sm.frequencies <= hi)
    ratio_db = 10 * np.log10(sm.psd[sel] / REF_MODEL.psd(sm.frequencies[sel]))
    assert np.max(np.abs(ratio_db)) < 3.0


def test_smoothing_decimation_grid():
    f = np.linspace(1e3, 1e6, 5000)
    out = smooth_spectrum(FmSpectrum(f, 1e6 / f), SmoothingPolicy(decimate=True, points_per_decade=10))
    assert out.frequencies.size == 31
    np.testing.assert_allclose(np.diff(np.log10(out.frequencies)), 0.1, rtol=1e-9)


# -------------------------------------------------------------------- fit

def test_fit_flat_spectrum():
    f = np.geomspace(1e3, 1e8, 4000)
    res = fit_fm_model(FmSpectrum(f, np.full(f.size, 3e5)), fit_band=(1e3, 1e8))
    assert res.model.s_white == pytest.approx(3e5, rel=1e-6)
    assert res.model.s_flicker == pytest.approx(0, abs=1e-3 * 3e5 * 1e3)
    assert res.model.s_randomwalk == pytest.approx(0, abs=1e-3 * 3e5 * 1e6)


def test_fit_pure_random_walk():
    f = np.geomspace(1e3, 1e8, 4000)
    res = fit_fm_model(FmSpectrum(f, 5e17 / f**2), fit_band=(1e3, 1e8))
    assert res.model.s_randomwalk == pytest.approx(5e17, rel=0.10)
    # the other terms stay negligible against the random walk at the band edges
    assert res.model.s_white < 1e-3 * 5e17 / 1e16
    assert res.model.s_flicker < 1e-3 * 5e17 / 1e8


def test_fit_degenerate_band():
    f = np.geomspace(1e3, 1e8, 400)
    with pytest.raises(FitDegenerateError):
        fit_fm_model(FmSpectrum(f, np.ones(f.size)), fit_band=(1e5, 5e5))


def test_fit_round_trip_reference_model():
    rec = synthesize_phase(REF_MODEL, 2**22, 2e9, seed=21)
    res = fit_fm_model(smooth_spectrum(estimate_fm_spectrum(rec)))
    for got, want in zip(res.model.as_tuple(), REF_MODEL.as_tuple()):
        assert got == pytest.approx(want, rel=0.20)
    assert res.rms_residual_db < 1.0


# -------------------------------------------------------------- linewidths

def test_lorentzian_values():
    assert lorentzian_linewidth(FmNoiseModel(0, 1e11, 1e17)) == 0
    assert lorentzian_linewidth(REF_MODEL) == math.pi * 5.4e5
    assert lorentzian_linewidth(REF_MODEL) == pytest.approx(1.696e6, rel=1e-3)


@given(st.floats(1e2, 1e9), st.floats(1e-3, 1e3))
def test_lorentzian_homogeneous(s, alpha):
    assert lorentzian_linewidth(FmNoiseModel(alpha * s)) == pytest.approx(
        alpha * lorentzian_linewidth(FmNoiseModel(s)), rel=1e-12)


def test_fhigh_closed_forms():
    c = 1e6
    assert integration_upper_frequency(FmNoiseModel(c)) == pytest.approx(c / BETA_SEPARATION, rel=1e-6)
    assert integration_upper_frequency(FmNoiseModel(0, 0, 5e17)) == pytest.approx(ORACLE_FHIGH_RW, rel=1e-6)
    assert (5e17 / BETA_SEPARATION) ** (1 / 3) == pytest.approx(9.6e5, rel=0.01)


def test_fhigh_reference_model():
    fh = integration_upper_frequency(REF_MODEL)
    assert fh == pytest.approx(ORACLE_FHIGH_REF, rel=2e-6)
    assert 1.9e6 <= fh <= 2.0e6


def test_fhigh_errors():
    with pytest.raises(InvalidModelError):
        integration_upper_frequency(FmNoiseModel())
    with pytest.raises(NoCrossingError):
        integration_upper_frequency(FmNoiseModel(1e13))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e8), st.floats(0, 1e14), st.floats(0, 1e20))
def test_fhigh_is_the_crossing(a, b, c):
    model = FmNoiseModel(a, b, c)
    if model.is_degenerate:
        return
    try:
        fh = integration_upper_frequency(model)
    except NoCrossingError:
        return
    # independent root from scipy
    ref = optimize.brentq(lambda f: float(model.psd(f)) - BETA_SEPARATION * f, 1.0, 1e12,
                          xtol=1e-12, rtol=1e-12)
    assert fh == pytest.approx(ref, rel=2e-6)


def test_gaussian_linewidth_reference_model():
    lw = gaussian_linewidth(REF_MODEL, 15e-6)
    assert lw == pytest.approx(ORACLE_DFG_REF_15US, rel=1e-5)
    assert lw == pytest.approx(7.4e6, rel=0.15)


def test_gaussian_linewidth_random_walk_only():
    model = FmNoiseModel(0, 0, 5e17)
    fh = integration_upper_frequency(model)
    assert slow_noise_power(model, 1 / 15e-6, fh) == pytest.approx(ORACLE_A_RW_15US, rel=1e-5)
    assert gaussian_linewidth(model, 15e-6) == pytest.approx(ORACLE_DFG_RW_15US, rel=1e-5)


def test_slow_noise_power_matches_quadrature():
    a = slow_noise_power(REF_MODEL, 1e4, 2e6)
    ref = integrate.quad(lambda f: float(REF_MODEL.psd(f)), 1e4, 2e6, limit=200)[0]
    assert a == pytest.approx(ref, rel=1e-8)


def test_gaussian_linewidth_validity_condition():
    model = FmNoiseModel(1e3, 0, 0)  # f_high ~ 1.8 kHz
    with pytest.raises(ApproximationInvalidError):
        gaussian_linewidth(model, 1e-3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lw = gaussian_linewidth(model, 1e-3, force=True)
    assert any(issubclass(w.category, UnreliableEstimateWarning) for w in caught)
    assert lw >= 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1e7), st.floats(1e9, 1e13), st.floats(1e15, 1e19),
       st.floats(2e-6, 5e-5), st.floats(1.01, 3.0))
def test_gaussian_linewidth_monotone_in_observation_time(a, b, c, tau, factor):
    model = FmNoiseModel(a, b, c)
    try:
        short = gaussian_linewidth(model, tau)
    except ApproximationInvalidError:
        return
    assert gaussian_linewidth(model, tau * factor) >= short


# ---------------------------------------------------------- phase variance

def test_phase_variance_zero_delay():
    rec = synthesize_phase(REF_MODEL, 4096, 1e9, seed=1)
    assert phase_variance(rec, [0.0]).variances[0] == 0


def test_phase_variance_grid_and_range():
    rec = synthesize_phase(REF_MODEL, 4096, 1e9, seed=1)
    with pytest.raises(GridMismatchError):
        phase_variance(rec, [1.5e-9])
    with pytest.raises(ValueError):
        phase_variance(rec, [2000e-9])


def test_phase_variance_wiener_oracle():
    lw = 1e6
    rec = synthesize_phase(FmNoiseModel.white(lw), 2**20, 1e9, seed=5)
    var = phase_variance(rec, [100e-9]).variances[0]
    assert var == pytest.approx(2 * np.pi * lw * 100e-9, rel=0.10)
    assert 2 * np.pi * lw * 100e-9 == pytest.approx(0.63, rel=0.01)


def test_phase_variance_linear_for_white_model():
    s = 3e5
    rec = synthesize_phase(FmNoiseModel(s), 2**20, 1e9, seed=9)
    delays = np.arange(1, 9) * 20e-9
    curve = phase_variance(rec, delays)
    slope = np.polyfit(delays, curve.variances, 1)[0]
    assert slope / (2 * np.pi) == pytest.approx(np.pi * s, rel=0.10)


def test_phase_variance_superlinear_for_reference_model():
    rec = synthesize_phase(REF_MODEL, 2**21, 2e9, seed=2)
    delays = np.array([1e-8, 1e-7, 1e-6, 1e-5])
    v = phase_variance(rec, delays).variances
    ratio = v / delays
    assert np.all(np.diff(ratio) > 0)


def test_slope_estimator_exact_line():
    delays = np.arange(1, 6) * 1e-8
    curve = PhaseVarianceCurve(delays, 2 * np.pi * 1e6 * delays)
    est = linewidth_from_variance_slope(curve)
    assert est.linewidth == pytest.approx(1e6, rel=1e-9)
    assert est.reliable


def test_slope_estimator_white_record():
    s = 3e5
    rec = synthesize_phase(FmNoiseModel(s), 2**20, 1e9, seed=19)
    curve = phase_variance(rec, np.arange(1, 5) * 50e-9)
    assert linewidth_from_variance_slope(curve).linewidth == pytest.approx(np.pi * s, rel=0.25)


def test_slope_estimator_reference_record_flagged():
    rec = synthesize_phase(REF_MODEL, 2**21, 2e9, seed=6)
    curve = phase_variance(rec, np.array([0.25, 1, 4, 16]) * 1e-6)
    est = linewidth_from_variance_slope(curve)
    assert est.linewidth > lorentzian_linewidth(REF_MODEL)
    assert not est.reliable


def test_slope_estimator_rejects_non_monotone():
    curve = PhaseVarianceCurve(np.arange(1, 5) * 1e-8, np.array([1.0, 0.5, 2.0, 3.0]))
    with pytest.raises(UnreliableEstimateError):
        linewidth_from_variance_slope(curve)


# ------------------------------------------------------------------- file io

def test_load_phase_file_iq_and_phase(tmp_path):
    ts = 1e-9
    k = np.arange(64)
    phi = 2 * np.pi * 1e6 * k * ts
    p1 = tmp_path / "iq.txt"
    rows = "\n".join(f"{float(np.cos(v))!r},{float(np.sin(v))!r}" for v in phi)
    p1.write_text(f"# sample_rate_hz=1e9 columns=I,Q\n{rows}\n")
    rec = load_phase_file(p1)
    np.testing.assert_allclose(rec.phases, phi, atol=1e-12)
    assert rec.sample_rate == pytest.approx(1e9)

    p2 = tmp_path / "phase.txt"
    rows = "\n".join(f"{float(t)!r} {float(v)!r}" for t, v in zip(k * ts, phi))
    p2.write_text(f"# sample_rate_hz=1e9 columns=time_s,phase_rad\n{rows}\n")
    np.testing.assert_allclose(load_phase_file(p2).phases, phi)


def test_load_phase_file_requires_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1\n1 2\n")
    with pytest.raises(ValueError):
        load_phase_file(p)
