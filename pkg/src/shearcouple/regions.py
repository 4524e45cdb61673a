"""The no-diffusion region: extraction, near-field scaling and snap checks.

For x > 0 particles drift downward (v > 0 pulls y toward -inf in the
backward picture), enter the region through its lower edge b(x) and leave
through its upper edge a(x).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .flows import FlowSpec
from .grid import Grid2D, ScalarField

FILAMENT_CELLS = 3


class RegionError(ValueError):
    """An analysis precondition failed (empty data, unbounded flow, ...)."""


@dataclass
class Component:
    """One 4-connected OFF component; a and b are sampled on its columns."""

    label: int
    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    nodes: int

    @property
    def x_extent(self) -> tuple:
        return float(self.x.min()), float(self.x.max())

    @property
    def y_extent(self) -> tuple:
        return float(self.b.min()), float(self.a.max())


@dataclass
class ControlRegion:
    """Per-node diffusion indicator (True = on) and, once extracted, the
    boundary polylines of every OFF component."""

    grid: Grid2D
    on: np.ndarray
    D: float = 2.0
    curvature: np.ndarray | None = field(default=None, repr=False)
    components: list = field(default_factory=list, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.on = np.asarray(self.on, dtype=bool)
        if self.on.shape != self.grid.shape:
            raise ValueError("indicator shape does not match the grid")

    @property
    def off(self) -> np.ndarray:
        return ~self.on

    def sigma(self) -> ScalarField:
        """sigma = sqrt(2 D) where diffusion is on, 0 elsewhere."""
        return ScalarField(self.grid, np.where(self.on, math.sqrt(2.0 * self.D), 0.0), "sigma")

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.on, self.on[::-1, ::-1]))

    def main_component(self) -> Component:
        """The component in x > 0 that reaches closest to the origin."""
        if not self.components:
            raise RegionError("no OFF components (run extract_boundaries first?)")
        best, dist = None, math.inf
        xs, ys = self.grid.x.phys, self.grid.y.phys
        for c in self.components:
            idx = np.argwhere(self.labels == c.label)
            keep = xs[idx[:, 0]] > 0
            if not keep.any():
                continue
            idx = idx[keep]
            d = np.min(np.hypot(xs[idx[:, 0]], ys[idx[:, 1]]))
            if d < dist:
                best, dist = c, d
        if best is None:
            raise RegionError("no OFF component in x > 0")
        return best

    def write_csv(self, path) -> None:
        """Rows ``x,a,b,component`` for every extracted component."""
        with open(path, "w") as fh:
            fh.write("x,a,b,component\n")
            for c in self.components:
                for x, a, b in zip(c.x, c.a, c.b):
                    fh.write(f"{x:.17g},{a:.17g},{b:.17g},{c.label:d}\n")


def _edge(ys, curv, j_in, j_out, thr):
    """Crossing of curvature = -thr between an OFF node and its ON neighbour."""
    if curv is None:
        return ys[j_in]
    c0, c1 = curv[j_in] + thr, curv[j_out] + thr
    if not (c0 < 0 <= c1) or c1 == c0:
        return ys[j_in]
    t = c0 / (c0 - c1)
    return ys[j_in] + t * (ys[j_out] - ys[j_in])


def extract_boundaries(region: ControlRegion, threshold: float = 0.0,
                       min_nodes: int = 1) -> ControlRegion:
    """Label OFF components (4-connectivity) and trace a(x), b(x) on each.

    Run ends are moved off the nodes by interpolating the curvature linearly
    to its switching value between the last OFF node and the first ON node.
    Components with fewer than ``min_nodes`` nodes are dropped.
    """
    off = region.off
    labels, count = ndimage.label(off)  # default structure = 4-connectivity
    ys = region.grid.y.phys
    xs = region.grid.x.phys
    ny = len(ys)
    comps = []
    for lab in range(1, count + 1):
        mask = labels == lab
        n = int(mask.sum())
        if n < min_nodes:
            labels[mask] = 0
            continue
        cols = np.nonzero(mask.any(axis=1))[0]
        a = np.empty(len(cols))
        b = np.empty(len(cols))
        for k, i in enumerate(cols):
            jj = np.nonzero(mask[i])[0]
            curv = None if region.curvature is None else region.curvature[i]
            top, bot = jj[-1], jj[0]
            a[k] = _edge(ys, curv, top, top + 1, threshold) if top + 1 < ny else ys[top]
            b[k] = _edge(ys, curv, bot, bot - 1, threshold) if bot > 0 else ys[bot]
        comps.append(Component(lab, xs[cols].copy(), a, b, n))
    region.components = comps
    region.labels = labels
    return region


# -- near-field scaling ---------------------------------------------------------


@dataclass
class ScalingFit:
    exponent: float
    intercept: float
    window: tuple
    residual: float
    points: int

    def to_json(self, path=None, **extra) -> str:
        d = asdict(self)
        d["window"] = list(self.window)
        d.update(extra)
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def default_window(grid: Grid2D) -> tuple:
    """[8 dx, 0.3 * half-width] on the x axis."""
    half = 0.5 * (grid.x.phys[-1] - grid.x.phys[0])
    return 8.0 * grid.x.min_spacing, 0.3 * half


def fit_entrance_exponent(x, b, window: tuple, min_spacing: float | None = None) -> ScalingFit:
    """Least squares of log(-b) = c + m log x over the window."""
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    lo, hi = window
    if min_spacing is not None and not lo > 2.0 * min_spacing:
        raise RegionError("fit window starts within two grid cells of the origin")
    sel = (x >= lo) & (x <= hi) & (x > 0) & (b < 0)
    n = int(sel.sum())
    if n < 8:
        raise RegionError(f"only {n} usable boundary points in window [{lo:g}, {hi:g}]")
    lx, ly = np.log(x[sel]), np.log(-b[sel])
    (m, c), *_ = np.linalg.lstsq(np.column_stack([lx, np.ones(n)]), ly, rcond=None)
    rms = float(np.sqrt(np.mean((ly - (c + m * lx)) ** 2)))
    return ScalingFit(float(m), float(c), (float(lo), float(hi)), rms, n)


def predicted_alpha(beta: float, Lambda: float = 0.0) -> float:
    """Near-field exponent of -b(x) for v ~ |x|^beta and marking rate ~ |x|^Lambda."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not beta > Lambda:
        raise ValueError("the scaling argument needs beta > Lambda")
    root = beta**2 + 2 * beta + 9 + Lambda**2 - 2 * beta * Lambda + 2 * Lambda
    return 0.5 * (beta - Lambda - 1 + math.sqrt(root))


def component_gaps(region: ControlRegion) -> list:
    """x-intervals in x > 0 not covered by any OFF component, between components."""
    spans = sorted(
        (max(c.x_extent[0], 0.0), c.x_extent[1]) for c in region.components if c.x_extent[1] > 0
    )
    gaps, reach = [], None
    for lo, hi in spans:
        if reach is not None and lo > reach:
            gaps.append((reach, lo))
        reach = hi if reach is None else max(reach, hi)
    return gaps


# -- snap ----------------------------------------------------------------------


@dataclass
class SnapReport:
    degenerate: bool
    x_m: float
    y_m: float | None
    decay_rate: float | None
    stations: list = field(default_factory=list)
    n_values: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def filament_onset(region: ControlRegion, x_m: float, cells: int = FILAMENT_CELLS,
                   y_limit: float | None = None) -> float | None:
    """Smallest y_m such that every row with y < -y_m (down to -y_limit) has
    its OFF nodes in one run no wider than ``cells`` cells, sitting within
    ``cells`` cells of x = x_m.  None if the deepest rows already fail."""
    xs, ys = region.grid.x.phys, region.grid.y.phys
    off = region.off
    im = int(region.grid.x.nearest(x_m))
    onset = None
    for j in range(1, len(ys) - 1):  # bottom row upwards
        y = ys[j]
        if y >= 0:
            break
        if y_limit is not None and y < -y_limit:
            continue
        ii = np.nonzero(off[:, j])[0]
        ok = (
            len(ii) > 0
            and ii[-1] - ii[0] == len(ii) - 1
            and len(ii) - 1 <= cells
            and ii[0] >= im - cells
            and ii[-1] <= im + cells
        )
        if ok:
            onset = -y
        elif onset is None:
            return None
        else:
            break
    return onset


def snap_report(region: ControlRegion, phi: ScalarField, flow: FlowSpec, stations=(),
                xi=(-np.inf, 1.0), eps: float = 1.0, y_scale: float = 1.0,
                y_limit: float | None = None, fit_span: float = 1.0) -> SnapReport:
    """Classify the far field of a bounded flow and measure the filament.

    ``stations`` are (y1, y2) pairs in nondimensional units (y / y_scale);
    the decay rate is returned in the same units.  ``y_limit`` (dimensional)
    excludes rows close to the end of the grid.  The decay rate is fitted on
    the filament column over ``fit_span`` nondimensional units below the
    onset.
    """
    from .snap import n_metric, psi_from_phi

    if not flow.bounded:
        raise RegionError("snap diagnostics need a bounded flow")
    x_m = flow.x_m
    y_m = filament_onset(region, x_m, y_limit=y_limit)
    degenerate = y_m is not None
    rate = None
    if degenerate:
        im = int(phi.grid.x.nearest(x_m))
        ys = phi.grid.y.phys
        lo = -(y_m + fit_span * y_scale)
        if y_limit is not None:
            lo = max(lo, -y_limit)
        sel = (ys <= -y_m) & (ys >= lo) & (phi.values[im] > 0)
        if sel.sum() >= 3:
            slope = np.polyfit(ys[sel] / y_scale, np.log(phi.values[im, sel]), 1)[0]
            rate = float(slope)
    n_vals = []
    if stations:
        psi = psi_from_phi(phi, eps, y_scale=y_scale)
        for y1, y2 in stations:
            res = n_metric(psi, xi[0], xi[1], y1 * y_scale, y2 * y_scale)
            n_vals.append(res.value)
    return SnapReport(degenerate, x_m, y_m, rate, [list(s) for s in stations], n_vals)
