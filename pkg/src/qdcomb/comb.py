"""Frequency-comb source: equidistant carriers with per-line phase noise."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .phasenoise import FmNoiseModel, PhaseRecord, synthesize_phase

REFERENCE_BANDWIDTH = 12.5e9
DEFAULT_FSR = 42e9

# fitted FM-noise coefficients of a single QD-MLLD tone
QD_MLLD_MODEL = FmNoiseModel(s_white=5.4e5, s_flicker=8.4e11, s_randomwalk=5.0e17)


@dataclass(frozen=True)
class CombSpec:
    """Comb description.

    ``envelope`` holds the relative power of each line in dB; ``line_noise``
    is either one shared :class:`FmNoiseModel` or a sequence with one model per
    line. ``ocnr_db`` is referenced to a 12.5 GHz bandwidth (``inf`` disables
    the carrier noise floor).
    """

    center_frequency: float = 193.4e12
    fsr: float = DEFAULT_FSR
    n_lines: int = 1
    envelope: tuple | None = None
    line_noise: FmNoiseModel | tuple = QD_MLLD_MODEL
    ocnr_db: float = 37.0

    def __post_init__(self):
        if not self.fsr > 0:
            raise ValidationError("fsr must be positive")
        if int(self.n_lines) != self.n_lines or self.n_lines < 1:
            raise ValidationError("n_lines must be a positive integer")
        if self.envelope is None:
            object.__setattr__(self, "envelope", (0.0,) * self.n_lines)
        else:
            env = tuple(float(v) for v in self.envelope)
            if len(env) != self.n_lines or not all(np.isfinite(env)):
                raise ValidationError("envelope needs one finite dB value per line")
            object.__setattr__(self, "envelope", env)
        if isinstance(self.line_noise, FmNoiseModel):
            pass
        else:
            models = tuple(self.line_noise)
            if len(models) != self.n_lines or not all(isinstance(m, FmNoiseModel) for m in models):
                raise ValidationError("line_noise must be one FmNoiseModel or one per line")
            object.__setattr__(self, "line_noise", models)
        if np.isnan(self.ocnr_db) or self.ocnr_db == -np.inf:
            raise ValidationError("ocnr_db must be a number (inf disables the noise floor)")

    @classmethod
    def with_gaussian_envelope(cls, n_lines: int, fwhm_lines: float, **kwargs) -> "CombSpec":
        """Spec whose line powers fall off as a Gaussian (in linear power) of the
        given full width at half maximum, measured in lines."""
        k = np.arange(n_lines) - (n_lines - 1) / 2
        env_db = -10 * np.log10(2.0) * (2 * k / fwhm_lines) ** 2
        return cls(n_lines=n_lines, envelope=tuple(env_db), **kwargs)

    def line_frequency(self, line_index: int) -> float:
        return self.center_frequency + (line_index - (self.n_lines - 1) / 2) * self.fsr

    def noise_model(self, line_index: int) -> FmNoiseModel:
        if isinstance(self.line_noise, FmNoiseModel):
            return self.line_noise
        return self.line_noise[line_index]

    def line_power(self, line_index: int) -> float:
        return 10 ** (self.envelope[line_index] / 10)


@dataclass(frozen=True)
class CarrierTone:
    frequency: float
    power: float
    phase_record: PhaseRecord = field(repr=False)
    line_index: int

    def __post_init__(self):
        if not self.power > 0:
            raise ValidationError("tone power must be positive")


def line_seed(seed, line_index: int) -> np.random.SeedSequence:
    """Seed for one comb line, independent of how many lines are generated."""
    return np.random.SeedSequence([int(seed), 0xC0B, int(line_index)])


def generate_comb(spec: CombSpec, duration: float, sample_rate: float, seed,
                  line_indices=None) -> list[CarrierTone]:
    """Build the comb's carriers, each with its own phase-noise realization.

    Lines are simulated at baseband, so every tone carries a phase record of
    ``round(duration * sample_rate)`` samples. ``line_indices`` restricts the
    generation to a subset; the result for a given line does not depend on the
    subset.
    """
    if not (duration > 0 and sample_rate > 0):
        raise ValidationError("duration and sample_rate must be positive")
    n = int(round(duration * sample_rate))
    indices = range(spec.n_lines) if line_indices is None else line_indices
    tones = []
    for i in indices:
        if not 0 <= i < spec.n_lines:
            raise ValidationError(f"line index {i} outside 0..{spec.n_lines - 1}")
        record = synthesize_phase(spec.noise_model(i), n, sample_rate, line_seed(seed, i))
        tones.append(CarrierTone(spec.line_frequency(i), spec.line_power(i), record, int(i)))
    return tones


def select_lines(tones, selection, flatten: bool = False) -> list[CarrierTone]:
    """Pick carriers the way a programmable optical filter would.

    ``selection`` is ``"odd"``, ``"even"`` (by ``line_index`` parity), ``"all"``
    or an iterable of line indices. With ``flatten`` every selected line is set
    to the mean power of the selection.
    """
    by_index = {t.line_index: t for t in tones}
    if isinstance(selection, str):
        if selection == "odd":
            chosen = [t for t in tones if t.line_index % 2 == 1]
        elif selection == "even":
            chosen = [t for t in tones if t.line_index % 2 == 0]
        elif selection == "all":
            chosen = list(tones)
        else:
            raise ValidationError(f"unknown selection {selection!r}")
    else:
        chosen = []
        for i in selection:
            if i not in by_index:
                raise ValidationError(f"line index {i} not among the tones")
            chosen.append(by_index[i])
    if not chosen:
        raise ValidationError("selection is empty")
    if flatten:
        level = float(np.mean([t.power for t in chosen]))
        chosen = [replace(t, power=level) for t in chosen]
    return chosen


def ocnr_noise_floor(spec: CombSpec, line_power: float) -> float:
    """Carrier noise PSD (linear units per Hz) that yields ``spec.ocnr_db``."""
    if np.isinf(spec.ocnr_db):
        return 0.0
    return line_power / (10 ** (spec.ocnr_db / 10) * REFERENCE_BANDWIDTH)
