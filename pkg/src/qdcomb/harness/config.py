"""Scenario configuration files (YAML).

A scenario is one experiment: a comb, a modulation format, a link, the
receiver DSP settings, a sweep axis and seeds. See ``docs/config.md`` for the
schema. Unknown keys are reported; with ``strict=True`` they are errors.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..channel import LinkSpec
from ..comb import QD_MLLD_MODEL, CombSpec
from ..errors import ConfigError, QdcombError
from ..phasenoise import FmNoiseModel
from ..rxdsp import BpsConfig, EqualizerConfig
from ..txdsp import constellation

CONFIG_SCHEMA_VERSION = 1
SWEEP_AXES = ("osnr", "snr", "symbol_rate", "linewidth", "channel")
CPR_MODES = ("bps", "blockwise")
MIN_BER_SYMBOLS = 100_000
PLOT_KINDS = ("ber_vs_osnr", "ber_per_channel", "evm_vs_rate", "fm_spectrum", "constellation")

_SCHEMA = {
    "version": None,
    "name": None,
    "description": None,
    "seed": None,
    "n_symbols": None,
    "modulation": {"format": None, "symbol_rate": None, "rolloff": None,
                   "samples_per_symbol": None, "pulse_span": None, "pdm_delay": None,
                   "pdm_delay_symbols": None},
    "comb": {"n_lines": None, "fsr": None, "center_frequency": None, "envelope_db": None,
             "envelope_fwhm_lines": None, "line_noise": None, "ocnr_db": None,
             "selection": None, "flatten": None},
    "link": {"fiber_length_km": None, "dispersion_ps_nm_km": None, "reference_wavelength": None,
             "osnr_db": None, "snr_db": None, "osnr_offsets_db": None,
             "osnr_tilt_db_per_thz": None, "lo_linewidth_hz": None, "lo_frequency_offset_hz": None,
             "polarization_angle_deg": None, "timing_offset_ui": None},
    "dsp": {"equalizer": {"n_taps": None, "step_size": None, "n_training_passes": None,
                          "training_symbols": None, "radius": None},
            "bps": {"n_test_phases": None, "unambiguity_half_range": None, "window_n": None},
            "cpr_mode": None, "block_length": None, "slip_segment": None},
    "sweep": {"axis": None, "values": None},
    "output": {"directory": None, "formats": None, "plots": None},
}


@dataclass(frozen=True)
class SweepSpec:
    """``axis`` names the swept quantity; ``values`` is the grid (channel
    indices for the ``channel`` axis, ``None`` meaning every selected line)."""

    axis: str = "osnr"
    values: tuple = ()

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        if self.values is not None:
            vals = tuple(self.values)
            if not vals:
                raise ConfigError("sweep grid must not be empty")
            if len(set(vals)) != len(vals):
                raise ConfigError("sweep grid contains duplicates")
            object.__setattr__(self, "values", vals)
        elif self.axis != "channel":
            raise ConfigError(f"sweep axis {self.axis!r} needs explicit values")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "results"
    formats: tuple = ("csv",)
    plots: tuple = ()

    def __post_init__(self):
        bad = [k for k in self.plots if k not in PLOT_KINDS]
        if bad:
            raise ConfigError(f"unknown plot kinds {bad}")
        bad = [f for f in self.formats if f not in ("csv", "png", "svg", "npz")]
        if bad:
            raise ConfigError(f"unknown output formats {bad}")


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment, fully resolved.

    ``osnr_db`` and ``snr_db`` are alternatives for the operating point when
    the sweep axis does not set it; ``snr_db`` is converted per symbol rate.
    ``osnr_offsets_db`` adds a per-channel offset indexed by comb line, and
    ``osnr_tilt_db_per_thz`` a linear tilt over carrier frequency (positive
    favours the high-frequency channels, as a preamplifier whose noise figure
    rises toward low frequencies would).
    """

    name: str = "scenario"
    description: str = ""
    seed: int = 0
    n_symbols: int = 400_000
    modulation: str = "16QAM"
    symbol_rate: float = 38e9
    rolloff: float = 0.05
    samples_per_symbol: int = 4
    pulse_span: int = 64
    pdm_delay: float = 5.3e-9
    pdm_delay_symbols: float | None = None
    comb: CombSpec = field(default_factory=CombSpec)
    selection: object = "all"
    flatten: bool = False
    link: LinkSpec = field(default_factory=lambda: LinkSpec(fiber_length=0.0))
    osnr_db: float | None = None
    snr_db: float | None = None
    osnr_offsets_db: tuple | None = None
    osnr_tilt_db_per_thz: float = 0.0
    polarization_angle_deg: float = 0.0
    timing_offset_ui: float = 0.0
    equalizer: EqualizerConfig = field(default_factory=EqualizerConfig)
    bps: BpsConfig = field(default_factory=BpsConfig)
    cpr_modes: tuple = ("bps",)
    block_length: int = 1024
    slip_segment: int | None = 1024
    sweep: SweepSpec = field(default_factory=lambda: SweepSpec("osnr", (25.0,)))
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.n_symbols < MIN_BER_SYMBOLS:
            raise ConfigError(f"n_symbols must be at least {MIN_BER_SYMBOLS} for BER scenarios")
        if self.osnr_db is not None and self.snr_db is not None:
            raise ConfigError("give either link.osnr_db or link.snr_db, not both")
        modes = tuple(self.cpr_modes)
        if not modes or any(m not in CPR_MODES for m in modes) or len(set(modes)) != len(modes):
            raise ConfigError(f"cpr_mode must be a non-empty subset of {CPR_MODES}")
        object.__setattr__(self, "cpr_modes", modes)
        if self.osnr_offsets_db is not None:
            offs = tuple(float(v) for v in self.osnr_offsets_db)
            if len(offs) != self.comb.n_lines:
                raise ConfigError("osnr_offsets_db needs one value per comb line")
            object.__setattr__(self, "osnr_offsets_db", offs)
        if self.symbol_rate <= 0:
            raise ConfigError("symbol_rate must be positive")
        try:
            constellation(self.modulation)
        except QdcombError as exc:
            raise ConfigError(str(exc)) from exc
        if self.sweep.axis == "channel" and self.sweep.values is not None:
            bad = [v for v in self.sweep.values
                   if not (isinstance(v, int) and 0 <= v < self.comb.n_lines)]
            if bad:
                raise ConfigError(f"channel sweep values outside 0..{self.comb.n_lines - 1}: {bad}")

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


def _check_keys(data, schema, path, strict, problems):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            problems.append(where)
        elif isinstance(schema[key], dict) and value is not None:
            _check_keys(value, schema[key], where, strict, problems)


def _num(value, name, positive=False, allow_inf=False):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if math.isnan(x) or (math.isinf(x) and not allow_inf):
        raise ConfigError(f"{name} must be finite")
    if positive and not x > 0:
        raise ConfigError(f"{name} must be positive")
    return x


def _int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be at least {minimum}")
    return int(value)


def parse_noise_model(spec, name="line_noise") -> FmNoiseModel:
    """``"qd_mlld"``, ``{linewidth_hz: x}`` (white FM only) or explicit coefficients."""
    if spec is None or spec == "qd_mlld":
        return QD_MLLD_MODEL
    if isinstance(spec, dict):
        keys = set(spec)
        if keys == {"linewidth_hz"}:
            return FmNoiseModel.white(_num(spec["linewidth_hz"], f"{name}.linewidth_hz"))
        if keys <= {"s_white", "s_flicker", "s_randomwalk"}:
            return FmNoiseModel(*(_num(spec.get(k, 0.0), f"{name}.{k}")
                                  for k in ("s_white", "s_flicker", "s_randomwalk")))
    raise ConfigError(f"{name} must be 'qd_mlld', {{linewidth_hz: ...}} or "
                      f"{{s_white, s_flicker, s_randomwalk}}")


def config_from_dict(data: dict, strict: bool = False) -> ScenarioConfig:
    problems: list = []
    _check_keys(data, _SCHEMA, "", strict, problems)
    if problems:
        msg = "unknown configuration keys: " + ", ".join(problems)
        if strict:
            raise ConfigError(msg)
        warnings.warn(msg, stacklevel=2)
    version = data.get("version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")

    mod = data.get("modulation") or {}
    comb_d = data.get("comb") or {}
    link_d = data.get("link") or {}
    dsp = data.get("dsp") or {}
    sweep_d = data.get("sweep") or {}
    out_d = data.get("output") or {}
    try:
        n_lines = _int(comb_d.get("n_lines", 1), "comb.n_lines", 1)
        comb_kw = dict(
            fsr=_num(comb_d.get("fsr", 42e9), "comb.fsr", positive=True),
            center_frequency=_num(comb_d.get("center_frequency", 193.4e12), "comb.center_frequency"),
            ocnr_db=_num(comb_d.get("ocnr_db", 37.0), "comb.ocnr_db", allow_inf=True),
        )
        noise = comb_d.get("line_noise")
        if isinstance(noise, list):
            comb_kw["line_noise"] = tuple(parse_noise_model(m, f"comb.line_noise[{i}]")
                                          for i, m in enumerate(noise))
        else:
            comb_kw["line_noise"] = parse_noise_model(noise)
        if comb_d.get("envelope_fwhm_lines") is not None:
            if comb_d.get("envelope_db") is not None:
                raise ConfigError("give comb.envelope_db or comb.envelope_fwhm_lines, not both")
            comb = CombSpec.with_gaussian_envelope(
                n_lines, _num(comb_d["envelope_fwhm_lines"], "comb.envelope_fwhm_lines", True),
                **comb_kw)
        else:
            env = comb_d.get("envelope_db")
            comb = CombSpec(n_lines=n_lines, envelope=None if env is None else tuple(env), **comb_kw)

        selection = comb_d.get("selection", "all")
        if isinstance(selection, list):
            selection = tuple(_int(i, "comb.selection entry", 0) for i in selection)
        elif selection not in ("all", "odd", "even"):
            raise ConfigError("comb.selection must be all, odd, even or a list of line indices")

        eq = dsp.get("equalizer") or {}
        equalizer = EqualizerConfig(
            n_taps=_int(eq.get("n_taps", 30), "dsp.equalizer.n_taps", 1),
            step_size=_num(eq.get("step_size", 1e-3), "dsp.equalizer.step_size", True),
            n_training_passes=_int(eq.get("n_training_passes", 4), "dsp.equalizer.n_training_passes", 0),
            training_symbols=_int(eq.get("training_symbols", 100_000), "dsp.equalizer.training_symbols", 0),
            radius=_num(eq.get("radius", 1.0), "dsp.equalizer.radius", True),
        )
        bp = dsp.get("bps") or {}
        bps = BpsConfig(
            n_test_phases=_int(bp.get("n_test_phases", 45), "dsp.bps.n_test_phases", 1),
            unambiguity_half_range=_num(bp.get("unambiguity_half_range", 45.0),
                                        "dsp.bps.unambiguity_half_range", True),
            window_n=_int(bp.get("window_n", 30), "dsp.bps.window_n", 1),
        )
        modes = dsp.get("cpr_mode", ["bps"])
        slip = dsp.get("slip_segment", 1024)
        modes = (modes,) if isinstance(modes, str) else tuple(modes)

        link = LinkSpec(
            fiber_length=_num(link_d.get("fiber_length_km", 0.0), "link.fiber_length_km") * 1e3,
            dispersion_ps_nm_km=_num(link_d.get("dispersion_ps_nm_km", 17.0), "link.dispersion_ps_nm_km"),
            reference_wavelength=_num(link_d.get("reference_wavelength", 1550e-9),
                                      "link.reference_wavelength", True),
            lo_model=FmNoiseModel.white(_num(link_d.get("lo_linewidth_hz", 10e3), "link.lo_linewidth_hz")),
            lo_frequency_offset=_num(link_d.get("lo_frequency_offset_hz", 0.0),
                                     "link.lo_frequency_offset_hz"),
        )
        osnr = link_d.get("osnr_db")
        snr = link_d.get("snr_db")

        axis = sweep_d.get("axis", "osnr")
        values = sweep_d.get("values")
        if axis == "channel":
            if values in (None, "all"):
                values = None
            else:
                values = tuple(_int(v, "sweep.values entry", 0) for v in values)
        else:
            if values is None:
                point = {"osnr": osnr, "snr": snr}.get(axis)
                values = () if point is None else (point,)
            values = tuple(_num(v, "sweep.values entry", allow_inf=True) for v in values)

        pdm_sym = mod.get("pdm_delay_symbols")
        if pdm_sym is not None and "pdm_delay" in mod:
            raise ConfigError("give either modulation.pdm_delay or modulation.pdm_delay_symbols, not both")
        return ScenarioConfig(
            name=str(data.get("name", "scenario")),
            description=str(data.get("description", "")),
            seed=_int(data.get("seed", 0), "seed", 0),
            n_symbols=_int(data.get("n_symbols", 400_000), "n_symbols", 1),
            modulation=str(mod.get("format", "16QAM")),
            symbol_rate=_num(mod.get("symbol_rate", 38e9), "modulation.symbol_rate", True),
            rolloff=_num(mod.get("rolloff", 0.05), "modulation.rolloff"),
            samples_per_symbol=_int(mod.get("samples_per_symbol", 4), "modulation.samples_per_symbol", 2),
            pulse_span=_int(mod.get("pulse_span", 64), "modulation.pulse_span", 2),
            pdm_delay=_num(mod.get("pdm_delay", 5.3e-9), "modulation.pdm_delay"),
            pdm_delay_symbols=None if pdm_sym is None else _num(pdm_sym, "modulation.pdm_delay_symbols"),
            comb=comb,
            selection=selection,
            flatten=bool(comb_d.get("flatten", False)),
            link=link,
            osnr_db=None if osnr is None else _num(osnr, "link.osnr_db", allow_inf=True),
            snr_db=None if snr is None else _num(snr, "link.snr_db", allow_inf=True),
            osnr_offsets_db=link_d.get("osnr_offsets_db"),
            osnr_tilt_db_per_thz=_num(link_d.get("osnr_tilt_db_per_thz", 0.0), "link.osnr_tilt_db_per_thz"),
            polarization_angle_deg=_num(link_d.get("polarization_angle_deg", 0.0),
                                        "link.polarization_angle_deg"),
            timing_offset_ui=_num(link_d.get("timing_offset_ui", 0.0), "link.timing_offset_ui"),
            equalizer=equalizer,
            bps=bps,
            cpr_modes=modes,
            block_length=_int(dsp.get("block_length", 1024), "dsp.block_length", 1),
            slip_segment=None if slip is None else _int(slip, "dsp.slip_segment", 1),
            sweep=SweepSpec(axis, values),
            output=OutputSpec(
                directory=str(out_d.get("directory", "results")),
                formats=tuple(out_d.get("formats", ("csv",))),
                plots=tuple(out_d.get("plots", ())),
            ),
        )
    except ConfigError:
        raise
    except (QdcombError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, strict: bool = False) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data, strict=strict)


def bundled_scenarios() -> dict:
    """Name -> path of every scenario file shipped with the package."""
    root = Path(__file__).resolve().parent.parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}
