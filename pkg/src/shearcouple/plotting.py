"""SVG renderings of a run directory (boundaries, contours, overlays)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .grid import read_binary  # noqa: E402

SVG_META = {"Date": None, "Creator": None}
CONTOUR_LEVELS = [3.0**-n for n in range(7, 0, -1)]


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "shearcouple", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def _read_csv(path: Path) -> dict:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return {n: np.zeros(0) for n in names}
    return {n: data[:, k] for k, n in enumerate(names)}


def region_plot(bounds: dict, path: Path, title: str, marks=()) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    labels = np.unique(bounds["component"]) if len(bounds["x"]) else []
    for lab in labels:
        sel = bounds["component"] == lab
        ax.plot(bounds["x"][sel], bounds["a"][sel], "-", color="C0", lw=1.2)
        ax.plot(bounds["x"][sel], bounds["b"][sel], "-", color="C3", lw=1.2)
    if len(labels) == 0:
        ax.text(0.5, 0.5, "no no-diffusion region found", transform=ax.transAxes,
                ha="center", va="center", color="C3")
    else:
        ax.plot([], [], "-", color="C0", label="exit a(x)")
        ax.plot([], [], "-", color="C3", label="entrance b(x)")
        ax.legend(loc="best")
    for m in marks:
        ax.axvline(m, ls="--", color="k", lw=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    return _save(fig, path)


def contour_plot(xs, ys, phi, path: Path, title: str, window: float = 4.0) -> Path:
    i = (np.abs(xs) <= window)
    j = (np.abs(ys) <= window)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.contour(xs[i], ys[j], phi[np.ix_(i, j)].T, levels=CONTOUR_LEVELS, colors="k",
               linewidths=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title + r"  (contours at $3^{-n}$, n = 1..7)")
    return _save(fig, path)


def wkb_plot(cmp: dict, path: Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.plot(cmp["x"], cmp["a"], "-", color="C0", label="numerical a")
    ax.plot(cmp["x"], cmp["b"], "-", color="C3", label="numerical b")
    ax.plot(cmp["x"], cmp["a0"], "--", color="k", label=r"$a_0$")
    ax.plot(cmp["x"], cmp["abar"], ":", color="C0", label=r"$\bar a$")
    ax.plot(cmp["x"], cmp["b_wkb"], ":", color="C3", label=r"$a_0 + \epsilon b_1$")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(loc="best")
    ax.set_title(title)
    return _save(fig, path)


def mask_plot(xs, ys, sigma, path: Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    off = (sigma == 0).astype(float)
    ax.contourf(xs, ys, off.T, levels=[0.5, 1.5], colors=["0.3"])
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title + " (shaded: no diffusion)")
    return _save(fig, path)


def render_all(out: Path, run) -> list:
    """Write every plot whose inputs exist in ``out``; the manifest and the
    field dump are required."""
    out = Path(out)
    missing = [n for n in ("manifest.json", "phi.bin", "solve.json") if not (out / n).is_file()]
    if missing:
        from .cli import AnalysisError

        raise AnalysisError("plot inputs missing: " + ", ".join(missing))
    grid = run.grid
    xs, ys = grid.x.phys, grid.y.phys
    phi = read_binary(out / "phi.bin")
    name = run.name
    written = [contour_plot(xs, ys, phi, out / "contours.svg", name)]
    if (out / "boundaries.csv").is_file():
        bounds = _read_csv(out / "boundaries.csv")
        written.append(region_plot(bounds, out / "region.svg", name))
        regions = out / "regions.json"
        if regions.is_file():
            gap = json.loads(regions.read_text()).get("gap_check")
            if gap:
                written.append(region_plot(bounds, out / "gap.svg", name, marks=gap["interval"]))
    if (out / "wkb_compare.csv").is_file():
        written.append(wkb_plot(_read_csv(out / "wkb_compare.csv"), out / "wkb_overlay.svg", name))
    if (out / "snap.json").is_file() and (out / "sigma.bin").is_file():
        written.append(mask_plot(xs, ys, read_binary(out / "sigma.bin"), out / "snap_region.svg", name))
    return written
