"""Receiver DSP chain.

resample to 2 sps -> timing recovery -> 2x2 CMA butterfly -> frequency-offset
estimation/correction -> carrier phase recovery (block-wise 4th power, or
symbol-wise blind phase search) -> decision and demapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import signal as sps_signal

from . import kernels
from .errors import (
    EqualizerSingularityError,
    InsufficientDataError,
    LockFailureError,
    ValidationError,
)
from .txdsp import ConstellationSpec, DualPolWaveform, demap_symbols


@dataclass(frozen=True)
class EqualizerConfig:
    n_taps: int = 30
    step_size: float = 1e-3
    n_training_passes: int = 4
    training_symbols: int = 100_000
    mode: str = "CMA"
    radius: float = 1.0

    def __post_init__(self):
        if self.n_taps < 1:
            raise ValidationError("n_taps must be >= 1")
        if not 0 < self.step_size < 0.1:
            raise ValidationError("step_size must be in (0, 0.1)")
        if self.n_training_passes < 0:
            raise ValidationError("n_training_passes must be >= 0")
        if self.mode.upper() != "CMA":
            raise ValidationError("only CMA mode is supported")


@dataclass(frozen=True)
class BpsConfig:
    n_test_phases: int = 45
    unambiguity_half_range: float = 45.0
    window_n: int = 30

    def __post_init__(self):
        if self.n_test_phases < 2:
            raise ValidationError("n_test_phases must be >= 2")
        if not 0 < self.unambiguity_half_range <= 180:
            raise ValidationError("unambiguity_half_range must be in (0, 180] degrees")
        if not 1 <= self.window_n <= 256:
            raise ValidationError("window_n must be in 1..256")

    @property
    def test_phase_step(self):
        """Spacing of the test phases in degrees."""
        return 2 * self.unambiguity_half_range / self.n_test_phases

    def test_phases(self):
        """Test phases in radians inside ``[-half, +half)``, always including 0."""
        k = np.arange(self.n_test_phases) - self.n_test_phases // 2
        deg = self.test_phase_step * k
        return np.deg2rad(deg)


@dataclass(frozen=True)
class SymbolFrame:
    """Symbol-rate streams of both polarizations plus processing metadata."""

    x_syms: np.ndarray = field(repr=False)
    y_syms: np.ndarray = field(repr=False)
    symbol_rate: float
    metadata: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x_syms, dtype=complex)
        y = np.asarray(self.y_syms, dtype=complex)
        if x.shape != y.shape or x.ndim != 1:
            raise ValidationError("symbol streams must be equal-length 1-D arrays")
        object.__setattr__(self, "x_syms", x)
        object.__setattr__(self, "y_syms", y)

    @property
    def n_symbols(self):
        return self.x_syms.size

    def stack(self):
        return np.vstack([self.x_syms, self.y_syms])

    def evolve(self, x, y, **meta):
        merged = dict(self.metadata)
        merged.update(meta)
        return replace(self, x_syms=x, y_syms=y, metadata=merged)


# ---------------------------------------------------------------- resampling

def resample_to_2sps(waveform: DualPolWaveform) -> DualPolWaveform:
    """Band-limited resampling to exactly two samples per symbol."""
    target = 2.0 * waveform.symbol_rate
    if waveform.sample_rate < target * (1 - 1e-12):
        raise ValidationError("input is sampled below 2 samples per symbol")
    if math.isclose(waveform.sample_rate, target, rel_tol=1e-12):
        return waveform
    ratio = Fraction(target / waveform.sample_rate).limit_denominator(10_000)
    n_out = waveform.n_samples * ratio
    if n_out.denominator == 1:
        # whole record is treated as periodic: exact Fourier-domain cropping
        x = sps_signal.resample(waveform.x_pol, int(n_out))
        y = sps_signal.resample(waveform.y_pol, int(n_out))
    else:
        x = sps_signal.resample_poly(waveform.x_pol, ratio.numerator, ratio.denominator)
        y = sps_signal.resample_poly(waveform.y_pol, ratio.numerator, ratio.denominator)
    return waveform.with_pols(x, y, sample_rate=target)


# ------------------------------------------------------------ timing recovery

def godard_timing_estimate(samples, symbol_rate: float) -> complex:
    """Godard band-edge correlation of a 2-sps block.

    ``sum_k X[k] conj(X[k + M/2])`` over the first half of the spectrum; its
    argument is ``-2 pi Rs tau`` for a symbol clock delayed by ``tau``.
    """
    samples = np.atleast_2d(samples)
    m = samples.shape[-1] - samples.shape[-1] % 2
    spec = np.fft.fft(samples[..., :m], axis=-1)
    half = m // 2
    return complex(np.sum(spec[..., :half] * np.conj(spec[..., half:])))


def cubic_interpolate(x, positions):
    """Cubic Lagrange (Farrow) interpolation of a periodic sequence."""
    n = x.size
    base = np.floor(positions).astype(np.int64)
    mu = positions - base
    xm1 = x[(base - 1) % n]
    x0 = x[base % n]
    x1 = x[(base + 1) % n]
    x2 = x[(base + 2) % n]
    # Farrow form of the 4-point Lagrange interpolator
    c3 = (x2 - xm1) / 6.0 + (x0 - x1) / 2.0
    c2 = (x1 + xm1) / 2.0 - x0
    c1 = x1 - x2 / 6.0 - x0 / 2.0 - xm1 / 3.0
    return ((c3 * mu + c2) * mu + c1) * mu + x0


def estimate_timing_offset(waveform: DualPolWaveform, block_symbols: int | None = None):
    """Symbol-clock delay in unit intervals, one value per block.

    Returns ``(block_starts_in_samples, delay_ui)``; the delays are unwrapped
    across blocks so slow clock drift is followed continuously.
    """
    if not math.isclose(waveform.samples_per_symbol, 2.0, rel_tol=1e-9):
        raise ValidationError("timing recovery expects 2 samples per symbol")
    data = waveform.stack()
    n = waveform.n_samples
    if block_symbols is None:
        block = n - n % 2
    else:
        block = 2 * int(block_symbols)
    starts = np.arange(0, max(n - block, 0) + 1, block) if block <= n else np.array([0])
    energy = float(np.sum(np.abs(data) ** 2))
    corr = np.array([godard_timing_estimate(data[:, s:s + block], waveform.symbol_rate)
                     for s in starts])
    if energy == 0 or np.all(np.abs(corr) <= 1e-12 * energy):
        raise LockFailureError("no symbol-rate spectral line (signal carries no timing tone)")
    phase = np.unwrap(np.angle(corr))
    return starts, -phase / (2 * np.pi)


def timing_recovery(waveform: DualPolWaveform, block_symbols: int | None = None) -> DualPolWaveform:
    """Resample so that even-indexed samples sit on the symbol instants.

    The delay is estimated with a Godard (square-law, band-edge) detector and
    removed with a cubic Farrow interpolator. With ``block_symbols`` the
    estimate is updated per block and linearly interpolated between block
    centres; by default one estimate covers the whole record.
    """
    starts, delay_ui = estimate_timing_offset(waveform, block_symbols)
    n = waveform.n_samples
    if delay_ui.size == 1:
        shift = np.full(n, delay_ui[0])
    else:
        block = starts[1] - starts[0]
        centres = starts + block / 2
        shift = np.interp(np.arange(n), centres, delay_ui)
    positions = np.arange(n) + 2.0 * shift
    x = cubic_interpolate(waveform.x_pol, positions)
    y = cubic_interpolate(waveform.y_pol, positions)
    return waveform.with_pols(x, y)


# ----------------------------------------------------------------- equalizer

def _tap_correlation(taps):
    a = taps[0].ravel()
    b = taps[1].ravel()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(abs(np.vdot(b, a)) / denom) if denom else 1.0


def _run_cma(xin, taps, config, n_sym):
    train = min(n_sym, config.training_symbols)
    out = np.empty((2, n_sym), dtype=complex)
    err = np.empty(n_sym)
    train_out = np.empty((2, train), dtype=complex)
    train_err = np.empty(train)
    for _ in range(config.n_training_passes):
        kernels.cma_run(xin, taps, config.step_size, config.radius, train, 2,
                        train_out, train_err, True)
    kernels.cma_run(xin, taps, config.step_size, config.radius, n_sym, 2, out, err, True)
    return out, err


def cma_equalize(waveform: DualPolWaveform, config: EqualizerConfig | None = None) -> SymbolFrame:
    """Blind 2x2 butterfly equalizer at 2 sps with constant-modulus updates.

    Taps start as centre spikes on the direct paths. When both outputs lock to
    the same source (tap correlation above 0.9) the second output is restarted
    from taps orthogonal to the first; if that fails too an
    :class:`EqualizerSingularityError` is raised. Output streams are scaled to
    unit mean energy.
    """
    config = config or EqualizerConfig()
    if not math.isclose(waveform.samples_per_symbol, 2.0, rel_tol=1e-9):
        raise ValidationError("CMA expects 2 samples per symbol")
    n_sym = waveform.n_samples // 2
    if n_sym < 2 * config.n_taps:
        raise InsufficientDataError("record too short for the equalizer")
    data = waveform.stack()
    power = np.mean(np.abs(data) ** 2, axis=1, keepdims=True)
    power[power == 0] = 1.0
    data = data / np.sqrt(power)

    t = config.n_taps
    centre = t // 2
    xin = np.zeros((2, 2 * n_sym + t), dtype=complex)
    xin[:, centre:centre + waveform.n_samples - waveform.n_samples % 2] = data[:, : 2 * n_sym]
    xin = np.ascontiguousarray(xin)

    taps = np.zeros((2, 2, t), dtype=complex)
    taps[0, 0, centre] = 1.0
    taps[1, 1, centre] = 1.0
    out, err = _run_cma(xin, taps, config, n_sym)
    reinitialized = False
    if _tap_correlation(taps) > 0.9:
        reinitialized = True
        fresh = np.zeros_like(taps)
        fresh[0] = taps[0]
        fresh[1, 0] = -np.conj(taps[0, 1, ::-1])
        fresh[1, 1] = np.conj(taps[0, 0, ::-1])
        taps = fresh
        out, err = _run_cma(xin, taps, config, n_sym)
        if _tap_correlation(taps) > 0.9:
            raise EqualizerSingularityError("both equalizer outputs converged to the same source")

    rms = np.sqrt(np.mean(np.abs(out) ** 2, axis=1, keepdims=True))
    rms[rms == 0] = 1.0
    out = out / rms
    meta = {
        "cma_cost": err,
        "cma_taps": taps.copy(),
        "cma_reinitialized": reinitialized,
        "tap_correlation": _tap_correlation(taps),
    }
    return SymbolFrame(out[0], out[1], waveform.symbol_rate, meta)


# ------------------------------------------------------ frequency offset

def qpsk_like_mask(symbols, constellation: ConstellationSpec):
    """Symbols usable by the 4th-power estimator.

    For 16QAM only the inner and outer rings (points on the diagonals) are
    kept, classified by energy relative to the mean.
    """
    if constellation.name == "QPSK":
        return np.ones(symbols.shape, dtype=bool)
    energy = np.abs(symbols) ** 2
    energy = energy / np.mean(energy)
    # ring energies 0.2, 1.0, 1.8: thresholds half-way
    return (energy < 0.6) | (energy > 1.4)


def _fourth_power(symbols, constellation):
    z = symbols**4
    return np.where(qpsk_like_mask(symbols, constellation), z, 0.0)


def estimate_frequency_offset(frame: SymbolFrame, constellation: ConstellationSpec,
                              smoothing: int = 64) -> float:
    """Carrier frequency offset in Hz from the 4th-power phase.

    A coarse estimate from the periodogram peak of the 4th-power signal is
    refined by a straight-line fit to its smoothed, unwrapped phase. The result
    is unambiguous within ``+-symbol_rate / 8``.
    """
    if frame.n_symbols < 1024:
        raise InsufficientDataError("frequency-offset estimation needs >= 1024 symbols")
    z = _fourth_power(frame.x_syms, constellation) + _fourth_power(frame.y_syms, constellation)
    k = np.arange(z.size)
    n_fft = 1 << int(math.ceil(math.log2(4 * z.size)))
    spec = np.abs(np.fft.fft(z, n_fft))
    coarse = np.fft.fftfreq(n_fft)[int(np.argmax(spec))]
    zr = z * np.exp(-2j * np.pi * coarse * k)
    smooth = np.convolve(zr, np.ones(smoothing), mode="same")
    phase = np.unwrap(np.angle(smooth))
    slope = np.polyfit(k, phase, 1)[0]
    f4 = coarse + slope / (2 * np.pi)
    return float(f4 * frame.symbol_rate / 4.0)


def correct_frequency_offset(frame: SymbolFrame, offset: float) -> SymbolFrame:
    if not np.isfinite(offset):
        raise ValidationError("offset must be finite")
    rot = np.exp(-2j * np.pi * offset * np.arange(frame.n_symbols) / frame.symbol_rate)
    prior = frame.metadata.get("frequency_offset", 0.0)
    return frame.evolve(frame.x_syms * rot, frame.y_syms * rot, frequency_offset=prior + offset)


# -------------------------------------------------------- carrier recovery

def cpr_blockwise(frame: SymbolFrame, constellation: ConstellationSpec, block_length: int = 1024,
                  fit_frequency: bool = False) -> SymbolFrame:
    """One phase per block from the (partitioned) 4th-power average.

    Block phases are unwrapped across blocks with period pi/2. With
    ``fit_frequency`` a residual frequency is also estimated per block and the
    phase follows a straight line inside the block.
    """
    if block_length < 64:
        raise ValidationError("block_length must be >= 64")
    outs, trajectories = [], []
    for sym in (frame.x_syms, frame.y_syms):
        z = _fourth_power(sym, constellation)
        n = sym.size
        starts = np.arange(0, n, block_length)
        block_phase = []
        block_slope = []
        for s in starts:
            zb = z[s:s + block_length]
            kk = np.arange(zb.size) - (zb.size - 1) / 2
            slope = 0.0
            if fit_frequency and zb.size > 1:
                slope = np.angle(np.sum(zb[1:] * np.conj(zb[:-1]))) / 4.0
            block_phase.append(np.angle(-np.sum(zb * np.exp(-4j * slope * kk))) / 4.0)
            block_slope.append(slope)
        block_phase = np.unwrap(np.asarray(block_phase), period=np.pi / 2)
        theta = np.empty(n)
        for s, ph, sl in zip(starts, block_phase, block_slope):
            m = min(block_length, n - s)
            kk = np.arange(m) - (m - 1) / 2
            theta[s:s + m] = ph + sl * kk
        outs.append(sym * np.exp(-1j * theta))
        trajectories.append(theta)
    return frame.evolve(outs[0], outs[1], phase_estimate=np.vstack(trajectories),
                        cpr="blockwise")


def cpr_bps(frame: SymbolFrame, constellation: ConstellationSpec,
            config: BpsConfig | None = None) -> SymbolFrame:
    """Symbol-wise blind phase search.

    For every symbol the ``window_n`` symbols centred on it are rotated by each
    test phase; the phase minimizing the summed squared distance to the nearest
    constellation points wins. Decisions are unwrapped across symbols with the
    pi/2 symmetry of square QAM. Windows shrink symmetrically at the frame ends.
    Ties go to the candidate nearest the previous unwrapped decision (smallest
    absolute phase for the first symbol).
    """
    config = config or BpsConfig()
    if config.window_n > frame.n_symbols:
        raise ValidationError("BPS window larger than the frame")
    tests = config.test_phases()
    h_lo = (config.window_n - 1) // 2
    h_hi = config.window_n // 2
    levels = np.ascontiguousarray(constellation.levels, dtype=float)
    outs, trajectories = [], []
    for sym in (frame.x_syms, frame.y_syms):
        sym = np.ascontiguousarray(sym)
        derot = np.asarray(kernels.bps_unwrapped(sym, tests, levels, h_lo, h_hi, 1e-9, np.pi / 2))
        outs.append(sym * np.exp(1j * derot))
        trajectories.append(-derot)
    return frame.evolve(outs[0], outs[1], phase_estimate=np.vstack(trajectories), cpr="bps")


def decide_and_demap(frame: SymbolFrame, constellation: ConstellationSpec) -> np.ndarray:
    """Minimum-distance decisions, Gray-demapped; x bits then y bits."""
    bits = [demap_symbols(constellation.nearest_labels(s), constellation)
            for s in (frame.x_syms, frame.y_syms)]
    return np.concatenate(bits)
