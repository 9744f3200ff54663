"""Static figures for scenario results and phase-noise characterization."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import ValidationError  # noqa: E402
from ..metrics import DEFAULT_THRESHOLDS, fec_label  # noqa: E402
from ..phasenoise import FmFitResult, FmNoiseModel, FmSpectrum  # noqa: E402
from .config import PLOT_KINDS  # noqa: E402

_MODE_STYLE = {"bps": ("tab:blue", "o"), "blockwise": ("tab:green", "s")}


def _fec_lines(ax):
    for threshold, overhead in DEFAULT_THRESHOLDS:
        ax.axhline(threshold, color="0.4", ls="--", lw=0.8)
        ax.annotate(f"FEC {fec_label(overhead)}", (0.01, threshold), xycoords=("axes fraction", "data"),
                    fontsize=7, va="bottom", color="0.3")


def ber_curves(rows, x_of):
    """Mean BER per (cpr mode, x), sorted by x. Zero-BER points are dropped
    because they cannot be drawn on a log axis."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        x = x_of(r)
        if x is not None:
            acc[r.cpr_mode][x].append(r.result.ber)
    out = {}
    for mode, pts in acc.items():
        xs = sorted(pts)
        ys = [float(np.mean(pts[x])) for x in xs]
        keep = [(x, y) for x, y in zip(xs, ys) if y > 0]
        out[mode] = (np.array([k[0] for k in keep]), np.array([k[1] for k in keep]))
    return out


def fm_spectrum_curve(data, n_points=400):
    """Frequency and PSD arrays drawn by the ``fm_spectrum`` plot."""
    if isinstance(data, FmNoiseModel):
        f = np.logspace(3, 10, n_points)
        return f, data.psd(f)
    if isinstance(data, FmSpectrum):
        keep = data.frequencies > 0
        return data.frequencies[keep], data.psd[keep]
    if isinstance(data, tuple) and data and isinstance(data[0], FmSpectrum):
        return fm_spectrum_curve(data[0])
    raise ValidationError("fm_spectrum needs an FmNoiseModel, an FmSpectrum or (FmSpectrum, FmFitResult)")


def _plot_ber_vs_osnr(rows, ax):
    def x_of(r):
        return r.osnr_db if r.osnr_db is not None and np.isfinite(r.osnr_db) else None

    for mode, (x, y) in sorted(ber_curves(rows, x_of).items()):
        color, marker = _MODE_STYLE.get(mode, ("k", "x"))
        ax.semilogy(x, y, marker=marker, color=color, label=mode.upper() if mode == "bps" else mode)
    ax.set_xlabel("OSNR (dB, 12.5 GHz)")
    ax.set_ylabel("BER")


def _plot_ber_per_channel(rows, ax):
    by_mode = defaultdict(list)
    for r in rows:
        by_mode[r.cpr_mode].append(r)
    for mode, members in sorted(by_mode.items()):
        color, marker = _MODE_STYLE.get(mode, ("k", "x"))
        f = np.array([m.result.carrier_frequency for m in members]) / 1e12
        b = np.array([m.result.ber for m in members])
        nz = b > 0
        ax.semilogy(f[nz], b[nz], ls="none", marker=marker, color=color, label=mode)
    ax.set_xlabel("carrier frequency (THz)")
    ax.set_ylabel("BER")


def _plot_evm_vs_rate(rows, ax):
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r.cpr_mode][r.symbol_rate / 1e9].append(r.result.evm_percent)
    for mode, pts in sorted(acc.items()):
        color, marker = _MODE_STYLE.get(mode, ("k", "x"))
        xs = sorted(pts)
        ax.plot(xs, [np.mean(pts[x]) for x in xs], marker=marker, color=color, label=mode)
    ax.set_xlabel("symbol rate (GBd)")
    ax.set_ylabel("EVM (%)")


def _plot_fm_spectrum(data, ax):
    f, s = fm_spectrum_curve(data)
    ax.loglog(f, s, color="tab:blue", lw=0.8, label="FM-noise spectrum")
    fit = None
    if isinstance(data, tuple) and len(data) > 1 and isinstance(data[1], FmFitResult):
        fit = data[1].model
    if fit is not None:
        ax.loglog(f, fit.psd(f), color="tab:red", lw=1.2, label="fit")
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("S_f (Hz^2/Hz)")


def _plot_constellation(data, fig):
    if isinstance(data, np.ndarray):
        data = {("", "", ""): data}
    items = sorted(data.items())[:6]
    if not items:
        raise ValidationError("no constellation samples to plot")
    n = len(items)
    cols = min(n, 3)
    rows = (n + cols - 1) // cols
    for i, (key, sym) in enumerate(items):
        ax = fig.add_subplot(rows, cols, i + 1)
        ax.plot(sym.real, sym.imag, ".", ms=1, color="tab:blue")
        ax.set_aspect("equal")
        lim = 1.3 * max(np.max(np.abs(sym.real)), np.max(np.abs(sym.imag)), 1e-12)
        ax.set_xlim(-lim, lim)
        ax.set_ylim(-lim, lim)
        if key[0] != "":
            ax.set_title(f"point {key[0]} ch {key[1]} {key[2]}", fontsize=8)


def build_figure(data, kind: str):
    """Draw one figure of the given ``kind`` and return it (caller closes it).

    ``data`` is a list of scenario rows for the BER/EVM kinds, a noise model or
    measured spectrum for ``fm_spectrum``, and a dict of symbol arrays (or one
    array) for ``constellation``.
    """
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    if data is None or (hasattr(data, "__len__") and len(data) == 0):
        raise ValidationError("nothing to plot")
    fig = plt.figure(figsize=(6.4, 4.4))
    try:
        if kind == "constellation":
            _plot_constellation(data, fig)
        else:
            ax = fig.add_subplot(1, 1, 1)
            if kind == "ber_vs_osnr":
                _plot_ber_vs_osnr(data, ax)
                _fec_lines(ax)
            elif kind == "ber_per_channel":
                _plot_ber_per_channel(data, ax)
                _fec_lines(ax)
            elif kind == "evm_vs_rate":
                _plot_evm_vs_rate(data, ax)
            else:
                _plot_fm_spectrum(data, ax)
            ax.grid(True, which="both", lw=0.3)
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=8)
        fig.tight_layout()
    except BaseException:
        plt.close(fig)
        raise
    return fig


def emit_plots(data, kind: str, out_dir, stem: str = "results", fmt: str = "png") -> list[Path]:
    """Write ``{stem}_{kind}.{fmt}`` into ``out_dir``; see :func:`build_figure`."""
    fig = build_figure(data, kind)
    try:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{stem}_{kind}.{fmt}"
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    return [path]
