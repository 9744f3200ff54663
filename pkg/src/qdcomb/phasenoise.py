"""Laser phase-noise synthesis and characterization.

A tone's frequency noise is described by the one-sided power spectral density

    S(f) = s_white + s_flicker / f + s_randomwalk / f**2      [Hz^2/Hz]

This module turns such a model into sampled phase trajectories and goes the
other way: from a sampled phase trajectory to an estimated FM-noise spectrum,
a fitted model, and the two linewidth figures derived from it (intrinsic
Lorentzian and observation-time-dependent Gaussian).
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, signal

from .errors import (
    ApproximationInvalidError,
    FitDegenerateError,
    GridMismatchError,
    InsufficientDataError,
    InvalidModelError,
    NoCrossingError,
    UnreliableEstimateError,
    UnreliableEstimateWarning,
    ValidationError,
)

# (4 ln 4) / pi^2: slope of the line separating slow and fast FM noise
BETA_SEPARATION = 4.0 * math.log(4.0) / math.pi**2

MIN_SYNTH_SAMPLES = 2**10
MIN_WELCH_SEGMENTS = 8
MIN_SEGMENT_LENGTH = 64


@dataclass(frozen=True)
class FmNoiseModel:
    """Three-term FM-noise model of a single optical tone.

    Parameters
    ----------
    s_white : float
        White frequency-noise level in Hz^2/Hz (quoted as Hz).
    s_flicker : float
        Flicker coefficient in Hz^2.
    s_randomwalk : float
        Random-walk coefficient in Hz^3.
    """

    s_white: float = 0.0
    s_flicker: float = 0.0
    s_randomwalk: float = 0.0

    def __post_init__(self):
        for name in ("s_white", "s_flicker", "s_randomwalk"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidModelError(f"{name} must be finite and >= 0, got {value!r}")

    @classmethod
    def white(cls, lorentzian_linewidth: float) -> "FmNoiseModel":
        """White-only model with the given intrinsic linewidth in Hz."""
        return cls(s_white=lorentzian_linewidth / math.pi)

    @property
    def is_degenerate(self) -> bool:
        return self.s_white == 0 and self.s_flicker == 0 and self.s_randomwalk == 0

    def psd(self, f):
        f = np.asarray(f, dtype=float)
        return self.s_white + self.s_flicker / f + self.s_randomwalk / f**2

    def as_tuple(self):
        return (self.s_white, self.s_flicker, self.s_randomwalk)


@dataclass(frozen=True)
class PhaseRecord:
    """Uniformly sampled, unwrapped optical phase trajectory."""

    phases: np.ndarray
    sample_interval: float
    seed: int | None = None

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float)
        if phases.ndim != 1 or phases.size < 2:
            raise InsufficientDataError("a phase record needs at least 2 samples")
        if not (self.sample_interval > 0 and np.isfinite(self.sample_interval)):
            raise ValidationError("sample_interval must be positive")
        if not np.all(np.isfinite(phases)):
            raise ValidationError("phases must be finite")
        object.__setattr__(self, "phases", phases)

    @classmethod
    def from_iq(cls, iq, sample_rate, seed=None):
        iq = np.asarray(iq)
        return cls(np.unwrap(np.angle(iq)), 1.0 / sample_rate, seed)

    @property
    def n_samples(self):
        return self.phases.size

    @property
    def sample_rate(self):
        return 1.0 / self.sample_interval

    @property
    def duration(self):
        return self.n_samples * self.sample_interval


@dataclass(frozen=True)
class FmSpectrum:
    """One-sided PSD of the instantaneous frequency, in Hz^2/Hz."""

    frequencies: np.ndarray
    psd: np.ndarray
    record_duration: float | None = None
    sample_rate: float | None = None

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        p = np.asarray(self.psd, dtype=float)
        if f.shape != p.shape or f.ndim != 1 or f.size == 0:
            raise ValidationError("frequencies and psd must be equal-length 1-D arrays")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValidationError("frequencies must be positive and strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("psd must be finite and non-negative")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "psd", p)


@dataclass(frozen=True)
class PhaseVarianceCurve:
    delays: np.ndarray
    variances: np.ndarray


@dataclass(frozen=True)
class FmFitResult:
    """Fitted model plus diagnostics.

    ``rms_residual_db`` is the RMS of ``10 log10(model / measured)`` over the
    log-spaced band averages used in the fit.
    """

    model: FmNoiseModel
    rms_residual_db: float
    n_points: int
    fit_band: tuple[float, float]


@dataclass(frozen=True)
class SmoothingPolicy:
    """Moving-average window whose width is a fixed fraction of a decade.

    With ``decimate`` the smoothed curve is resampled onto a log grid with
    ``points_per_decade`` points.
    """

    decade_fraction: float = 0.1
    decimate: bool = False
    points_per_decade: int = 20

    def __post_init__(self):
        if not self.decade_fraction > 0:
            raise ValidationError("decade_fraction must be positive")
        if self.points_per_decade < 1:
            raise ValidationError("points_per_decade must be >= 1")


@dataclass(frozen=True)
class VarianceSlopeEstimate:
    linewidth: float
    rms_residual: float
    reliable: bool
    delays_used: np.ndarray = field(repr=False)


def synthesize_phase(model: FmNoiseModel, n_samples: int, sample_rate: float, seed) -> PhaseRecord:
    """Draw a phase trajectory whose instantaneous frequency has PSD ``model``.

    White Gaussian noise is shaped in the frequency domain by
    ``sqrt(S(f) * fs / 2)`` and integrated to phase. The DC bin is zeroed, so
    the spectrum is truncated below ``1 / duration``.
    """
    if not isinstance(model, FmNoiseModel):
        raise InvalidModelError("model must be an FmNoiseModel")
    n_samples = int(n_samples)
    if n_samples < MIN_SYNTH_SAMPLES:
        raise ValidationError(f"n_samples must be >= {MIN_SYNTH_SAMPLES}")
    if not (sample_rate > 0 and np.isfinite(sample_rate)):
        raise ValidationError("sample_rate must be positive")
    tau = 1.0 / sample_rate
    seed_int = _seed_as_int(seed)
    if model.is_degenerate:
        return PhaseRecord(np.zeros(n_samples), tau, seed_int)

    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(n_samples))
    f = np.fft.rfftfreq(n_samples, d=tau)
    gain = np.zeros_like(f)
    gain[1:] = np.sqrt(model.psd(f[1:]) * sample_rate / 2.0)
    f_inst = np.fft.irfft(spectrum * gain, n_samples)

    phases = np.empty(n_samples)
    phases[0] = 0.0
    np.cumsum(f_inst[:-1], out=phases[1:])
    phases[1:] *= 2.0 * np.pi * tau
    return PhaseRecord(phases, tau, seed_int)


def _seed_as_int(seed):
    if seed is None:
        return None
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    try:
        return int(seed)
    except (TypeError, ValueError):
        return None


def instantaneous_frequency(record: PhaseRecord) -> np.ndarray:
    """First-difference instantaneous frequency in Hz, length ``n - 1``."""
    phases = record.phases
    if phases.size < 2:
        raise InsufficientDataError("need at least 2 phase samples")
    return np.diff(phases) / (2.0 * np.pi * record.sample_interval)


def estimate_fm_spectrum(record: PhaseRecord, nperseg: int | None = None) -> FmSpectrum:
    """Segment-averaged (Welch, Hann, 50 % overlap) PSD of the instantaneous frequency."""
    f_inst = instantaneous_frequency(record)
    n = f_inst.size
    if nperseg is None:
        # largest power of two that still yields >= 8 half-overlapping segments
        limit = 2 * n // (MIN_WELCH_SEGMENTS + 1)
        if limit < MIN_SEGMENT_LENGTH:
            raise InsufficientDataError(
                f"record of {record.n_samples} samples is too short for "
                f"{MIN_WELCH_SEGMENTS} averaging segments"
            )
        nperseg = 1 << int(math.floor(math.log2(limit)))
    else:
        nperseg = int(nperseg)
        n_seg = (n - nperseg) // (nperseg // 2) + 1 if n >= nperseg else 0
        if nperseg < MIN_SEGMENT_LENGTH or n_seg < MIN_WELCH_SEGMENTS:
            raise InsufficientDataError("nperseg leaves fewer than 8 averaging segments")

    fs = record.sample_rate
    f, psd = signal.welch(
        f_inst,
        fs=fs,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend="constant",
        scaling="density",
    )
    return FmSpectrum(f[1:], np.maximum(psd[1:], 0.0), record.duration, fs)


def smooth_spectrum(spec: FmSpectrum, window_policy: SmoothingPolicy | None = None) -> FmSpectrum:
    """Moving average with a window proportional to frequency.

    Around each frequency ``f`` all bins within ``f * r / 2`` are averaged,
    ``r = 10**(w/2) - 10**(-w/2)`` for a window of ``w`` decades. The window is
    shrunk symmetrically near the ends of the grid.
    """
    policy = window_policy or SmoothingPolicy()
    f = spec.frequencies
    p = spec.psd
    r = 10 ** (policy.decade_fraction / 2) - 10 ** (-policy.decade_fraction / 2)
    half = f * r / 2.0
    half = np.minimum(half, np.minimum(f - f[0], f[-1] - f))
    lo = np.searchsorted(f, f - half, side="left")
    hi = np.searchsorted(f, f + half, side="right")
    csum = np.concatenate(([0.0], np.cumsum(p)))
    smoothed = (csum[hi] - csum[lo]) / (hi - lo)

    if not policy.decimate:
        return FmSpectrum(f, smoothed, spec.record_duration, spec.sample_rate)

    n_dec = math.log10(f[-1] / f[0])
    n_pts = max(2, int(math.ceil(n_dec * policy.points_per_decade)) + 1)
    grid = np.geomspace(f[0], f[-1], n_pts)
    values = np.exp(np.interp(np.log(grid), np.log(f), np.log(np.maximum(smoothed, 1e-300))))
    values[smoothed.max() == 0] = 0.0
    return FmSpectrum(grid, values, spec.record_duration, spec.sample_rate)


def default_fit_band(spec: FmSpectrum) -> tuple[float, float]:
    if spec.record_duration and spec.sample_rate:
        return 5.0 / spec.record_duration, spec.sample_rate / 8.0
    return spec.frequencies[0] * 5.0, spec.frequencies[-1] / 4.0


def fit_fm_model(spec: FmSpectrum, fit_band=None, bands_per_decade: int = 10,
                 n_reweight: int = 3) -> FmFitResult:
    """Non-negative least-squares fit of the three-term model.

    The PSD is first averaged over log-spaced bands so that every decade gets
    the same weight; each band contributes one equation with relative error
    weighting, ``(model_band - measured_band) / measured_band``. The model in a
    band is averaged over exactly the bins the measurement averaged, which keeps
    the fit unbiased on steep slopes. The relative weights are refined
    ``n_reweight`` times from the current prediction.
    """
    lo, hi = default_fit_band(spec) if fit_band is None else (float(fit_band[0]), float(fit_band[1]))
    if not (0 < lo < hi):
        raise ValidationError("fit band must satisfy 0 < low < high")
    f = spec.frequencies
    lo = max(lo, f[0])
    hi = min(hi, f[-1])
    if hi <= lo or math.log10(hi / lo) < 1.0:
        raise FitDegenerateError(
            f"fit band [{lo:.3g}, {hi:.3g}] Hz spans less than one decade of the spectrum"
        )

    edges = np.geomspace(lo, hi, int(math.ceil(math.log10(hi / lo) * bands_per_decade)) + 1)
    idx = np.searchsorted(f, edges, side="left")
    idx[-1] = np.searchsorted(f, hi, side="right")
    rows, targets = [], []
    inv_f, inv_f2 = 1.0 / f, 1.0 / f**2
    for a, b in zip(idx[:-1], idx[1:]):
        if b <= a:
            continue
        measured = spec.psd[a:b].mean()
        if measured <= 0:
            continue
        rows.append([1.0, inv_f[a:b].mean(), inv_f2[a:b].mean()])
        targets.append(measured)
    if len(rows) < 3:
        raise FitDegenerateError("fewer than three populated bands in the fit range")

    basis = np.asarray(rows)
    measured = np.asarray(targets)
    # weights from the noisy measurement bias the fit low where bands are
    # sparse, so re-weight with the previous prediction
    weight = measured
    for _ in range(n_reweight + 1):
        design = basis / weight[:, None]
        scale = np.linalg.norm(design, axis=0)
        scale[scale == 0] = 1.0
        coef, _ = optimize.nnls(design / scale, measured / weight)
        coef = coef / scale
        predicted = basis @ coef
        if np.any(predicted <= 0):
            break
        weight = predicted

    model = FmNoiseModel(*(float(c) for c in coef))
    predicted = basis @ coef
    with np.errstate(divide="ignore"):
        resid_db = 10 * np.log10(np.maximum(predicted, 1e-300) / measured)
    return FmFitResult(model, float(np.sqrt(np.mean(resid_db**2))), len(rows), (lo, hi))


def lorentzian_linewidth(model: FmNoiseModel) -> float:
    """Intrinsic linewidth, ``pi * s_white``."""
    return math.pi * model.s_white


def integration_upper_frequency(model: FmNoiseModel, rtol: float = 1e-6,
                                bracket=(1.0, 1e12)) -> float:
    """Frequency where ``S(f)`` drops below ``(4 ln 4 / pi^2) f``.

    ``S(f) - beta f`` is strictly decreasing for non-negative coefficients, so
    the crossing is unique; it is found by geometric bisection.
    """
    if model.is_degenerate:
        raise InvalidModelError("model has no noise terms")

    def excess(f):
        return float(model.psd(f)) - BETA_SEPARATION * f

    lo, hi = bracket
    if excess(lo) <= 0 or excess(hi) >= 0:
        raise NoCrossingError(f"no crossing of S(f) with {BETA_SEPARATION:.4f} f in [{lo:g}, {hi:g}] Hz")
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def slow_noise_power(model: FmNoiseModel, f_low: float, f_high: float) -> float:
    """Closed-form integral of the model PSD between ``f_low`` and ``f_high``."""
    return (model.s_white * (f_high - f_low)
            + model.s_flicker * math.log(f_high / f_low)
            + model.s_randomwalk * (1.0 / f_low - 1.0 / f_high))


def gaussian_linewidth(model: FmNoiseModel, observation_time: float, force: bool = False) -> float:
    """Long-term FWHM linewidth for an observation time ``tau0``.

    Integrates the model from ``1/tau0`` to the upper frequency returned by
    :func:`integration_upper_frequency` and returns ``sqrt(8 ln2 A)``. The
    approximation requires ``f_high > 5 f_low``; with ``force=True`` an
    out-of-range result is returned with an :class:`UnreliableEstimateWarning`.
    """
    if not observation_time > 0:
        raise ValidationError("observation_time must be positive")
    f_low = 1.0 / observation_time
    f_high = integration_upper_frequency(model)
    if not f_high > 5.0 * f_low:
        msg = (f"f_high = {f_high:.4g} Hz is not above 5 f_low = {5 * f_low:.4g} Hz; "
               "Gaussian approximation invalid")
        if not force:
            raise ApproximationInvalidError(msg)
        warnings.warn(msg, UnreliableEstimateWarning, stacklevel=2)
        if f_high <= f_low:
            return 0.0
    area = slow_noise_power(model, f_low, f_high)
    return math.sqrt(8.0 * math.log(2.0) * area)


def phase_variance(record: PhaseRecord, delays) -> PhaseVarianceCurve:
    """Variance of delay-dependent phase differences, mean drift removed."""
    delays = np.atleast_1d(np.asarray(delays, dtype=float))
    lags = delays / record.sample_interval
    rounded = np.rint(lags)
    if np.any(np.abs(lags - rounded) > 1e-6 * np.maximum(1.0, np.abs(lags))):
        raise GridMismatchError("every delay must be an integer multiple of the sample interval")
    rounded = rounded.astype(np.int64)
    if np.any(rounded < 0) or np.any(rounded >= record.n_samples / 4):
        raise ValidationError("delays must be non-negative and below a quarter of the record")
    phi = record.phases
    out = np.zeros(rounded.size)
    for i, lag in enumerate(rounded):
        if lag:
            out[i] = np.var(phi[lag:] - phi[:-lag])
    return PhaseVarianceCurve(delays, out)


def linewidth_from_variance_slope(curve: PhaseVarianceCurve, n_fit: int = 4,
                                  curvature_tolerance: float = 0.1) -> VarianceSlopeEstimate:
    """Intrinsic linewidth from the small-delay slope of the phase variance.

    A straight line ``a + b tau`` is fitted to the ``n_fit`` smallest positive
    delays and ``b / (2 pi)`` is returned. The estimate is flagged unreliable
    when the secant slopes over the first and last pair of fit points differ by
    more than ``curvature_tolerance`` (relative), i.e. the variance is not yet
    linear in the delay.
    """
    order = np.argsort(curve.delays)
    tau = np.asarray(curve.delays, dtype=float)[order]
    var = np.asarray(curve.variances, dtype=float)[order]
    keep = tau > 0
    tau, var = tau[keep][:n_fit], var[keep][:n_fit]
    if tau.size < 4:
        raise InsufficientDataError("need at least 4 positive delays")
    if np.any(np.diff(var) <= 0):
        raise UnreliableEstimateError("phase variance is not increasing over the smallest delays")
    slope, intercept = np.polyfit(tau, var, 1)
    if slope <= 0:
        raise UnreliableEstimateError("non-positive phase-variance slope")
    resid = var - (intercept + slope * tau)
    rms = float(np.sqrt(np.mean(resid**2)) / np.mean(var))
    first = (var[1] - var[0]) / (tau[1] - tau[0])
    last = (var[-1] - var[-2]) / (tau[-1] - tau[-2])
    reliable = abs(last - first) <= curvature_tolerance * abs(first)
    return VarianceSlopeEstimate(slope / (2.0 * np.pi), rms, bool(reliable), tau)


_RATE_RE = re.compile(r"sample_rate_hz\s*[=:]\s*([0-9eE+.\-]+)")
_COLS_RE = re.compile(r"columns\s*[=:]\s*([A-Za-z_]+)\s*,\s*([A-Za-z_]+)")


def load_phase_file(path) -> PhaseRecord:
    """Read a two-column text record.

    The first line is a comment header, for example::

        # sample_rate_hz=2e9 columns=I,Q

    ``columns`` is ``time_s,phase_rad`` (the default) or ``I,Q``. Columns may be
    separated by whitespace or commas.
    """
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
    m = _RATE_RE.search(header)
    if not header.lstrip().startswith("#") or m is None:
        raise ValidationError(f"{path}: first line must be a '# sample_rate_hz=...' header")
    rate = float(m.group(1))
    cols = _COLS_RE.search(header)
    kind = (cols.group(1).lower(), cols.group(2).lower()) if cols else ("time_s", "phase_rad")
    text = path.read_text().replace(",", " ")
    data = np.loadtxt(text.splitlines(), comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValidationError(f"{path}: expected two numeric columns, got {data.shape[1]}")
    if kind == ("i", "q"):
        return PhaseRecord.from_iq(data[:, 0] + 1j * data[:, 1], rate)
    if kind == ("time_s", "phase_rad"):
        return PhaseRecord(data[:, 1], 1.0 / rate)
    raise ValidationError(f"{path}: unknown column layout {kind}")
