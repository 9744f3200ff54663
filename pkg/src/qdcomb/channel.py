"""Link impairments: ASE loading, chromatic dispersion, polarization rotation,
and intradyne down-conversion against a noisy local oscillator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .phasenoise import FmNoiseModel, synthesize_phase
from .txdsp import DualPolWaveform

REFERENCE_BANDWIDTH = 12.5e9
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class LinkSpec:
    """Fiber link and receiver front end.

    ``dispersion_ps_nm_km`` is the usual fiber dispersion parameter; the SI
    value is available as :attr:`dispersion_si` (s/m^2). ``target_osnr_db`` is
    referenced to 12.5 GHz with signal and noise summed over both
    polarizations; ``None`` disables noise loading.
    """

    fiber_length: float = 75e3
    dispersion_ps_nm_km: float = 17.0
    reference_wavelength: float = 1550e-9
    target_osnr_db: float | None = None
    lo_model: FmNoiseModel = field(default_factory=lambda: FmNoiseModel.white(10e3))
    lo_frequency_offset: float = 0.0

    def __post_init__(self):
        if self.fiber_length < 0:
            raise ValidationError("fiber_length must be >= 0")
        if not self.reference_wavelength > 0:
            raise ValidationError("reference_wavelength must be positive")

    @property
    def dispersion_si(self):
        return self.dispersion_ps_nm_km * 1e-6

    @property
    def accumulated_dispersion_ps_nm(self):
        return self.dispersion_ps_nm_km * self.fiber_length / 1e3


def load_ase_noise(signal: DualPolWaveform, target_osnr_db, seed) -> DualPolWaveform:
    """Add white complex Gaussian noise to reach ``target_osnr_db``.

    The noise PSD is chosen so that total signal power over noise power in
    12.5 GHz (both polarizations) equals the target; it is split equally and
    independently between the polarizations. ``inf`` or ``None`` returns the
    input unchanged.
    """
    if target_osnr_db is None or target_osnr_db == math.inf:
        return signal
    if not np.isfinite(target_osnr_db):
        raise ValidationError("target OSNR must be finite (or inf to disable)")
    p_sig = signal.power()
    if not p_sig > 0:
        raise ValidationError("signal power must be positive")
    psd_total = p_sig / (10 ** (target_osnr_db / 10) * REFERENCE_BANDWIDTH)
    sigma = math.sqrt(psd_total / 2 * signal.sample_rate / 2)
    rng = np.random.default_rng(seed)
    n = signal.n_samples
    noise = sigma * (rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n)))
    return signal.with_pols(signal.x_pol + noise[0], signal.y_pol + noise[1])


def measure_osnr(signal_plus_noise: DualPolWaveform, clean_reference: DualPolWaveform) -> float:
    """OSNR in dB (12.5 GHz, both polarizations) from a noisy/clean pair."""
    if (signal_plus_noise.n_samples != clean_reference.n_samples
            or not np.isclose(signal_plus_noise.sample_rate, clean_reference.sample_rate)):
        raise ValidationError("waveforms must share length and sample rate")
    noise = signal_plus_noise.with_pols(signal_plus_noise.x_pol - clean_reference.x_pol,
                                        signal_plus_noise.y_pol - clean_reference.y_pol)
    p_noise = noise.power()
    if p_noise == 0:
        return math.inf
    psd = p_noise / signal_plus_noise.sample_rate
    return 10 * math.log10(clean_reference.power() / (psd * REFERENCE_BANDWIDTH))


def cd_phase_coefficient(link: LinkSpec) -> float:
    """``pi * lambda^2 * D * L / c``, the f^2 coefficient of the CD phase."""
    lam = link.reference_wavelength
    return math.pi * lam**2 * link.dispersion_si * link.fiber_length / SPEED_OF_LIGHT


def apply_cd(signal: DualPolWaveform, link: LinkSpec, direction: str = "forward") -> DualPolWaveform:
    """All-pass quadratic-phase filter, applied circularly in the frequency domain."""
    if direction not in ("forward", "inverse"):
        raise ValidationError("direction must be 'forward' or 'inverse'")
    if link.fiber_length == 0 or link.dispersion_ps_nm_km == 0:
        return signal
    f = np.fft.fftfreq(signal.n_samples, d=1.0 / signal.sample_rate)
    sign = -1.0 if direction == "forward" else 1.0
    h = np.exp(sign * 1j * cd_phase_coefficient(link) * f**2)
    x = np.fft.ifft(np.fft.fft(signal.x_pol) * h)
    y = np.fft.ifft(np.fft.fft(signal.y_pol) * h)
    return signal.with_pols(x, y)


def coherent_receive(signal: DualPolWaveform, link: LinkSpec, seed) -> DualPolWaveform:
    """Mix with the LO: multiply by ``exp(-j (2 pi df t + phi_LO(t)))``."""
    n = signal.n_samples
    t = np.arange(n) / signal.sample_rate
    phase = 2 * np.pi * link.lo_frequency_offset * t
    if not link.lo_model.is_degenerate:
        record = synthesize_phase(link.lo_model, max(n, 1024), signal.sample_rate, seed)
        phase = phase + record.phases[:n]
    if not np.any(phase):
        return signal
    lo = np.exp(-1j * phase)
    return signal.with_pols(signal.x_pol * lo, signal.y_pol * lo)


def rotation_jones(theta: float, phase: float = 0.0) -> np.ndarray:
    """Unitary Jones matrix: rotation by ``theta`` with a relative retardance."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s * np.exp(-1j * phase)], [s * np.exp(1j * phase), c]])


def apply_polarization_rotation(signal: DualPolWaveform, jones) -> DualPolWaveform:
    jones = np.asarray(jones, dtype=complex)
    if jones.shape != (2, 2):
        raise ValidationError("jones must be a 2x2 matrix")
    if not np.allclose(jones.conj().T @ jones, np.eye(2), atol=1e-9, rtol=0):
        raise ValidationError("jones matrix is not unitary")
    out = jones @ signal.stack()
    return signal.with_pols(out[0], out[1])


def apply_fractional_delay(signal: DualPolWaveform, delay: float) -> DualPolWaveform:
    """Circular delay by ``delay`` seconds (band-limited, frequency domain)."""
    f = np.fft.fftfreq(signal.n_samples, d=1.0 / signal.sample_rate)
    h = np.exp(-2j * np.pi * f * delay)
    return signal.with_pols(np.fft.ifft(np.fft.fft(signal.x_pol) * h),
                            np.fft.ifft(np.fft.fft(signal.y_pol) * h))
