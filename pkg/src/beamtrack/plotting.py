"""Report figures rendered straight to files.

Figures are drawn on Agg canvases without touching pyplot state, so calls are
safe from scripts, tests and worker threads. PNG metadata is pinned so that
identical data give identical files.
"""

from __future__ import annotations

import functools
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .array import pattern_grid
from .codebook import Codebook, codebook_pattern
from .sim import RunMetrics, SweepRow

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
    "svg.hashsalt": "beamtrack",
}
GOLDEN = (np.sqrt(5) - 1) / 2


def _styled(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(STYLE):
            return func(*args, **kwargs)
    return wrapper


def _figure(width=6.0, height=None, nrows=1, sharex=False):
    fig = Figure(figsize=(width, height or width * GOLDEN))
    FigureCanvasAgg(fig)
    return fig, fig.subplots(nrows, 1, sharex=sharex, squeeze=False)[:, 0]


def _save(fig: Figure, path, fmt: str = "png") -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format=fmt, dpi=120, metadata={"Software": None})
    return path


@_styled
def plot_codebook(cb: Codebook, path, floor_db: float = -30.0) -> Path:
    """Power patterns (dB over isotropic) of every codebook entry."""
    grid = pattern_grid(0.1)
    with np.errstate(divide="ignore"):
        pat = np.maximum(10 * np.log10(codebook_pattern(cb, grid)), floor_db)
    fig, (ax,) = _figure()
    deg = np.rad2deg(grid)
    for k, row in enumerate(pat):
        ax.plot(deg, row, color="C0" if k % 2 == 0 else "C1", alpha=0.8)
    ax.axhline(10 * np.log10(cb.geometry.n_elements), color="k", ls=":", lw=0.8)
    ax.set_xlim(-90, 90)
    ax.set_ylim(floor_db, 10 * np.log10(cb.geometry.n_elements) + 2)
    ax.set_xlabel("azimuth [deg]")
    ax.set_ylabel("gain [dB]")
    width = np.rad2deg(cb[0].beamwidth)
    label = "pencil" if width == 0 else f"{width:g} deg wide"
    ax.set_title(f"{len(cb)} entries, {label}")
    return _save(fig, path)


@_styled
def plot_run(m: RunMetrics, path, label: str = "") -> Path:
    """SNR through the serving beam against the best entry, with sweep marks."""
    fig, (ax, bx) = _figure(height=4.5, nrows=2, sharex=True)
    ax.plot(m.t_s, m.aligned_snr_db, color="0.6", label="best entry")
    ax.plot(m.t_s, m.snr_db, color="C0", label="serving beam")
    sweeps = np.flatnonzero(np.asarray(m.action) == "sweep")
    if len(sweeps):
        ax.plot(m.t_s[sweeps], m.snr_db[sweeps], "v", color="C3", ms=3, label="sweep")
    ax.set_ylabel("SNR [dB]")
    ax.legend(loc="lower left", ncol=3)
    if label:
        ax.set_title(label)
    bx.plot(m.t_s, np.rad2deg(m.phi), color="0.3", label="true")
    if np.isfinite(m.theta_hat).any():
        bx.plot(m.t_s, np.rad2deg(m.theta_hat), color="C1", label="estimate")
        bx.legend(loc="lower left", ncol=2)
    bx.set_xlabel("time [s]")
    bx.set_ylabel("azimuth [deg]")
    return _save(fig, path)


@_styled
def plot_sweep(rows: list[SweepRow], path) -> Path:
    """Average SNR and sweep rate against beamwidth; the pencil row sits at 0."""
    bw = np.array([r.beamwidth_deg for r in rows])
    fig, (ax, bx) = _figure(height=4.5, nrows=2, sharex=True)
    ax.plot(bw, [r.static_snr_db for r in rows], "o-", label="static")
    ax.plot(bw, [r.dynamic_snr_db for r in rows], "s-", label="dynamic, TRN only")
    ax.set_ylabel("avg SNR [dB]")
    ax.legend()
    bx.plot(bw, [r.trn_per_s for r in rows], "o-", label="TRN only")
    pf = np.array([r.trn_per_s_pf for r in rows])
    if np.isfinite(pf).any():
        bx.plot(bw, pf, "s-", label="PF")
    bx.set_xlabel("beamwidth [deg] (0 = pencil)")
    bx.set_ylabel("sweeps per s")
    bx.legend()
    return _save(fig, path)
