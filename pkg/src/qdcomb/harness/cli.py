"""Command-line entry point: ``qdcomb run|characterize|report|plot|scenarios``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime stage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, QdcombError, StageError, ValidationError
from ..phasenoise import (
    FmSpectrum,
    estimate_fm_spectrum,
    fit_fm_model,
    gaussian_linewidth,
    integration_upper_frequency,
    load_phase_file,
    lorentzian_linewidth,
    smooth_spectrum,
)
from .config import PLOT_KINDS, bundled_scenarios, load_config
from .plots import emit_plots
from .runner import format_report, load_constellations, read_scenario_csv, run_scenario, sweep_report

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2
SPECTRUM_COLUMNS = ("frequency_hz", "psd_hz2_per_hz", "smoothed_hz2_per_hz", "model_hz2_per_hz")


def _resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    raise ConfigError(f"no such config file or bundled scenario: {name}")


def cmd_run(args) -> int:
    config = load_config(_resolve_config(args.config), strict=args.strict_config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_symbols is not None:
        overrides["n_symbols"] = args.n_symbols
    if overrides:
        try:
            config = config.with_overrides(**overrides)
        except QdcombError as exc:
            raise ConfigError(str(exc)) from exc
    out_dir = args.out_dir or config.output.directory
    run = run_scenario(config, out_dir=out_dir, threads=args.threads)
    print(format_report(sweep_report(run.rows, config.comb.fsr), config.sweep.axis))
    print(f"results: {run.csv_path}")
    for p in run.plot_paths:
        print(f"figure: {p}")
    return EXIT_OK


def cmd_characterize(args) -> int:
    record = load_phase_file(args.iq_file)
    spectrum = estimate_fm_spectrum(record)
    smoothed = smooth_spectrum(spectrum)
    fit = fit_fm_model(smoothed)
    model = fit.model
    print(f"samples            {record.n_samples} at {record.sample_rate:.6g} Hz")
    print(f"S_L                {model.s_white:.4g} Hz")
    print(f"S_1                {model.s_flicker:.4g} Hz^2")
    print(f"S_2                {model.s_randomwalk:.4g} Hz^3")
    print(f"fit residual       {fit.rms_residual_db:.3f} dB rms over "
          f"{fit.fit_band[0]:.3g}..{fit.fit_band[1]:.3g} Hz")
    print(f"Lorentzian width   {lorentzian_linewidth(model) / 1e6:.4g} MHz")
    try:
        f_high = integration_upper_frequency(model)
        print(f"f_high             {f_high / 1e6:.4g} MHz")
        lw = gaussian_linewidth(model, args.observation_time)
        print(f"Gaussian width     {lw / 1e6:.4g} MHz (observation {args.observation_time:g} s)")
    except QdcombError as exc:
        print(f"Gaussian width     n/a ({exc})")
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.iq_file).stem
    path = out / f"{stem}_fm_spectrum.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        for f, s, sm, m in zip(spectrum.frequencies, spectrum.psd, smoothed.psd,
                               model.psd(spectrum.frequencies)):
            w.writerow([repr(float(f)), repr(float(s)), repr(float(sm)), repr(float(m))])
    print(f"spectrum: {path}")
    for p in emit_plots((smoothed, fit), "fm_spectrum", out, stem=stem):
        print(f"figure: {p}")
    return EXIT_OK


def read_spectrum_csv(path) -> FmSpectrum:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise ValidationError(f"{path}: expected frequency and PSD columns")
    return FmSpectrum(data[:, 0], data[:, 1])


def cmd_report(args) -> int:
    rows = read_scenario_csv(args.results)
    axis = rows[0].sweep_axis if rows else ""
    print(format_report(sweep_report(rows, args.channel_spacing), axis))
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.results)
    out = Path(args.out_dir or src.parent)
    if args.kind == "fm_spectrum":
        data = read_spectrum_csv(src)
    elif args.kind == "constellation":
        npz = src.with_name(f"{src.stem}_constellations.npz")
        if not npz.exists():
            raise ValidationError(f"no constellation samples next to {src} (expected {npz.name})")
        data = load_constellations(npz)
    else:
        data = read_scenario_csv(src)
    for p in emit_plots(data, args.kind, out, stem=src.stem, fmt=args.format):
        print(f"figure: {p}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name, path in bundled_scenarios().items():
        print(f"{name:14s} {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdcomb", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or bundled scenario name")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--threads", type=int, default=1, help="worker processes (0 = all cores)")
    r.add_argument("--strict-config", action="store_true", help="reject unknown config keys")
    r.add_argument("--n-symbols", type=int, help="override the symbol count per channel")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("characterize", help="FM-noise analysis of a recorded phase/IQ file")
    c.add_argument("iq_file")
    c.add_argument("--observation-time", type=float, default=15e-6)
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_characterize)

    rp = sub.add_parser("report", help="rates and FEC classes from a results CSV")
    rp.add_argument("results")
    rp.add_argument("--channel-spacing", type=float, default=42e9)
    rp.set_defaults(func=cmd_report)

    pl = sub.add_parser("plot", help="draw a figure from a results or spectrum CSV")
    pl.add_argument("results")
    pl.add_argument("--kind", required=True, choices=PLOT_KINDS)
    pl.add_argument("--out-dir")
    pl.add_argument("--format", default="png", choices=("png", "svg"))
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("scenarios", help="list bundled scenarios")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        where = f" (channel {exc.channel}, sweep value {exc.sweep_value})" if exc.channel is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QdcombError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
