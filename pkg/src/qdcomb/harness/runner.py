"""Scenario execution: expand a config into channel jobs, run them, persist."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..comb import CarrierTone, ocnr_noise_floor, select_lines
from ..errors import StageError, ValidationError
from ..metrics import (
    RESULT_COLUMNS,
    ChannelResult,
    FecPolicy,
    aggregate_rates,
    fec_classify,
    fec_label,
    result_to_row,
    row_to_result,
)
from ..phasenoise import FmNoiseModel, PhaseRecord
from ..txdsp import constellation
from .config import ScenarioConfig
from .pipeline import ChannelJob, osnr_for_snr, run_channel

log = logging.getLogger(__name__)

SCENARIO_COLUMNS = ("sweep_index", "sweep_axis", "sweep_value", "cpr_mode", "modulation",
                    "symbol_rate_baud", "osnr_db") + RESULT_COLUMNS
CONSTELLATION_SAMPLES = 4000


@dataclass(frozen=True)
class ScenarioRow:
    """One channel at one sweep point for one CPR mode."""

    sweep_index: int
    sweep_axis: str
    sweep_value: float
    cpr_mode: str
    modulation: str
    symbol_rate: float
    osnr_db: float | None
    result: ChannelResult


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    rows: list
    csv_path: Path | None = None
    plot_paths: list = field(default_factory=list)
    constellations: dict = field(default_factory=dict, repr=False)
    errors: list = field(default_factory=list)


@dataclass(frozen=True)
class GroupSummary:
    sweep_value: float | None
    cpr_mode: str | None
    symbol_rate: float
    line_rate: float
    net_rate: float
    line_spectral_efficiency: float
    net_spectral_efficiency: float
    n_channels: int
    class_counts: dict
    worst_channel: int | None
    worst_ber: float | None


def channel_seed(base_seed: int, channel_index: int, sweep_index: int) -> tuple:
    """Seed entropy for one job; independent of scheduling and of the other jobs."""
    return (int(base_seed), int(channel_index), int(sweep_index))


def selected_channels(config: ScenarioConfig) -> list[int]:
    # select_lines only looks at line_index, so placeholder tones suffice
    record = PhaseRecord(np.zeros(2), 1.0)
    tones = [CarrierTone(1.0, 1.0, record, i) for i in range(config.comb.n_lines)]
    return [t.line_index for t in select_lines(tones, config.selection)]


def sweep_points(config: ScenarioConfig) -> list[tuple]:
    """``(sweep_index, sweep_value, channels)`` for every point of the grid."""
    channels = selected_channels(config)
    if config.sweep.axis == "channel":
        values = config.sweep.values if config.sweep.values is not None else channels
        return [(i, int(v), [int(v)]) for i, v in enumerate(values)]
    return [(i, float(v), channels) for i, v in enumerate(config.sweep.values)]


def _channel_osnr(config, base_osnr, base_snr, symbol_rate, line, channels):
    if base_osnr is None and base_snr is None:
        return None
    osnr = base_osnr if base_osnr is not None else osnr_for_snr(base_snr, symbol_rate)
    if math.isinf(osnr):
        return osnr
    if config.osnr_offsets_db is not None:
        osnr += config.osnr_offsets_db[line]
    if config.osnr_tilt_db_per_thz:
        offset_thz = (config.comb.line_frequency(line) - config.comb.center_frequency) / 1e12
        osnr += config.osnr_tilt_db_per_thz * offset_thz
    if not config.flatten:
        env = config.comb.envelope
        osnr += env[line] - float(np.mean([env[c] for c in channels]))
    return osnr


def build_jobs(config: ScenarioConfig) -> list[tuple]:
    """``(sweep_index, sweep_value, ChannelJob)`` in deterministic order."""
    jobs = []
    all_channels = selected_channels(config)
    axis = config.sweep.axis
    for sweep_index, value, channels in sweep_points(config):
        for line in channels:
            rs = value if axis == "symbol_rate" else config.symbol_rate
            osnr, snr = config.osnr_db, config.snr_db
            if axis == "osnr":
                osnr, snr = value, None
            elif axis == "snr":
                osnr, snr = None, value
            model = config.comb.noise_model(line)
            if axis == "linewidth":
                model = FmNoiseModel.white(value)
            job = ChannelJob(
                modulation=config.modulation,
                symbol_rate=rs,
                rolloff=config.rolloff,
                samples_per_symbol=config.samples_per_symbol,
                pulse_span=config.pulse_span,
                n_symbols=config.n_symbols,
                carrier_model=model,
                carrier_frequency=config.comb.line_frequency(line),
                carrier_noise_psd=ocnr_noise_floor(config.comb, 1.0),
                link=config.link,
                osnr_db=_channel_osnr(config, osnr, snr, rs, line, all_channels),
                polarization_angle_deg=config.polarization_angle_deg,
                pdm_delay=(config.pdm_delay if config.pdm_delay_symbols is None
                           else config.pdm_delay_symbols / rs),
                timing_offset_ui=config.timing_offset_ui,
                equalizer=config.equalizer,
                bps=config.bps,
                cpr_modes=config.cpr_modes,
                block_length=config.block_length,
                slip_segment=config.slip_segment,
                channel_index=line,
                seed=channel_seed(config.seed, line, sweep_index),
            )
            jobs.append((sweep_index, value, job))
    return jobs


def _execute(job: ChannelJob, keep_symbols: bool):
    try:
        outcomes = run_channel(job, keep_symbols=keep_symbols)
    except StageError as exc:
        return exc
    for o in outcomes:
        if o.received is not None:
            o.received = np.array(o.received[0, :CONSTELLATION_SAMPLES])
    return outcomes


def _pool_size(threads):
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def run_jobs(jobs, threads=1, keep_symbols=False):
    """Run ``ChannelJob`` objects; results come back in job order."""
    n = _pool_size(threads)
    if n == 1 or len(jobs) <= 1:
        return [_execute(j, keep_symbols) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as pool:
        return list(pool.map(_execute, jobs, [keep_symbols] * len(jobs)))


def run_scenario(config: ScenarioConfig, out_dir=None, threads: int = 1,
                 write: bool = True) -> ScenarioRun:
    """Run every sweep point and channel of ``config``.

    Output is ordered by sweep point, channel and CPR mode regardless of how
    the work was scheduled. The CSV lands in ``out_dir`` (default: the
    config's output directory). If any stage failed, the successful rows are
    still written and the first failure is re-raised as :class:`StageError`
    carrying the channel and sweep value.
    """
    plan = build_jobs(config)
    keep = "constellation" in config.output.plots
    outcomes = run_jobs([j for _, _, j in plan], threads, keep)
    run = ScenarioRun(config, [])
    for (sweep_index, value, job), res in zip(plan, outcomes):
        if isinstance(res, StageError):
            run.errors.append(StageError(str(res), channel=job.channel_index, sweep_value=value,
                                         stage=getattr(res, "stage", None)))
            log.error("sweep point %s channel %d: %s", value, job.channel_index, res)
            continue
        for o in res:
            result = ChannelResult(
                channel_index=job.channel_index,
                ber=o.ber,
                evm_percent=o.evm_percent,
                n_bits_counted=o.n_bits,
                n_errors=o.n_errors,
                fec_class=o.fec_class,
                carrier_frequency=job.carrier_frequency,
            )
            run.rows.append(ScenarioRow(sweep_index, config.sweep.axis, float(value), o.cpr_mode,
                                        job.modulation, job.symbol_rate, job.osnr_db, result))
            if o.received is not None:
                run.constellations[(sweep_index, job.channel_index, o.cpr_mode)] = o.received
    if write:
        out = Path(out_dir if out_dir is not None else config.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        run.csv_path = out / f"{config.name}.csv"
        write_scenario_csv(run.rows, run.csv_path)
        if run.constellations:
            save_constellations(run.constellations, out / f"{config.name}_constellations.npz")
        if config.output.plots and not run.errors:
            from .plots import emit_plots

            fmt = "svg" if "svg" in config.output.formats else "png"
            for kind in config.output.plots:
                data = run.constellations if kind == "constellation" else run.rows
                if kind == "fm_spectrum":
                    data = config.comb.noise_model(selected_channels(config)[0])
                run.plot_paths.extend(emit_plots(data, kind, out, stem=config.name, fmt=fmt))
    if run.errors:
        first = run.errors[0]
        raise StageError(f"{len(run.errors)} job(s) failed; first: {first}", channel=first.channel,
                         sweep_value=first.sweep_value, stage=first.stage)
    return run


def _fmt(x):
    return "" if x is None else repr(float(x))


def scenario_row_to_dict(row: ScenarioRow) -> dict:
    d = {
        "sweep_index": row.sweep_index,
        "sweep_axis": row.sweep_axis,
        "sweep_value": _fmt(row.sweep_value),
        "cpr_mode": row.cpr_mode,
        "modulation": row.modulation,
        "symbol_rate_baud": _fmt(row.symbol_rate),
        "osnr_db": _fmt(row.osnr_db),
    }
    d.update(result_to_row(row.result))
    return d


def write_scenario_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SCENARIO_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(scenario_row_to_dict(r))


def read_scenario_csv(path) -> list[ScenarioRow]:
    """Read a scenario CSV; a bare per-channel result CSV is accepted too."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for i, d in enumerate(reader):
            osnr = d.get("osnr_db") or None
            rows.append(ScenarioRow(
                sweep_index=int(d.get("sweep_index") or 0),
                sweep_axis=d.get("sweep_axis") or "channel",
                sweep_value=float(d.get("sweep_value") or d["channel_index"]),
                cpr_mode=d.get("cpr_mode") or "bps",
                modulation=d.get("modulation") or "16QAM",
                symbol_rate=float(d.get("symbol_rate_baud") or 0.0),
                osnr_db=None if osnr is None else float(osnr),
                result=row_to_result(d),
            ))
    return rows


def save_constellations(constellations: dict, path) -> None:
    arrays = {f"s{s}_ch{c}_{m}": v for (s, c, m), v in sorted(constellations.items())}
    np.savez_compressed(path, **arrays)


def load_constellations(path) -> dict:
    out = {}
    with np.load(path) as data:
        for key in data.files:
            s, c, m = key.split("_", 2)
            out[(int(s[1:]), int(c[2:]), m)] = data[key]
    return out


def sweep_report(rows, channel_spacing: float = 42e9, policy: FecPolicy | None = None) -> list[GroupSummary]:
    """Rates, FEC class counts and worst channel per (sweep point, CPR mode).

    Without ``policy`` the stored FEC class of every row is used. Empty input
    gives a single all-zero summary.
    """
    rows = list(rows)
    if not rows:
        r = aggregate_rates([], 0.0, 1, channel_spacing=channel_spacing)
        return [GroupSummary(None, None, 0.0, r.line_rate, r.net_rate, r.line_spectral_efficiency,
                             r.net_spectral_efficiency, 0, {}, None, None)]
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.sweep_index, row.cpr_mode), []).append(row)
    out = []
    for (_, mode), members in sorted(groups.items()):
        first = members[0]
        bps = constellation(first.modulation).bits_per_symbol
        results = [m.result for m in members]
        r = aggregate_rates(results, first.symbol_rate, bps, policy=policy,
                            channel_spacing=channel_spacing)
        worst = max(results, key=lambda x: (x.ber, -x.channel_index))
        out.append(GroupSummary(first.sweep_value, mode, first.symbol_rate, r.line_rate, r.net_rate,
                                r.line_spectral_efficiency, r.net_spectral_efficiency,
                                r.n_channels, r.class_counts, worst.channel_index, worst.ber))
    return out


def format_report(summaries, axis: str = "") -> str:
    lines = []
    for g in summaries:
        head = f"{axis or 'point'}={g.sweep_value:g} cpr={g.cpr_mode}" if g.cpr_mode else "no results"
        counts = ", ".join(f"{k}: {v}" for k, v in sorted(g.class_counts.items()))
        lines.append(head)
        lines.append(f"  channels {g.n_channels}  line {g.line_rate / 1e12:.4f} Tbit/s  "
                     f"net {g.net_rate / 1e12:.4f} Tbit/s")
        lines.append(f"  SE line {g.line_spectral_efficiency:.3f}  net "
                     f"{g.net_spectral_efficiency:.3f} bit/s/Hz")
        if g.worst_channel is not None:
            lines.append(f"  FEC classes [{counts}]  worst channel {g.worst_channel} "
                         f"BER {g.worst_ber:.3e} ({fec_label(fec_classify(g.worst_ber))})")
    return "\n".join(lines)
