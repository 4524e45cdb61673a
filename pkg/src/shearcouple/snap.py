"""Exact-snap diagnostics for bounded flows.

Far from the x axis the success probability of a bounded flow (sup v = 1 in
nondimensional units) is at most exp(-|y| / (2 eps^2)).  Dividing that bound
out gives psi; an exact snap shows up as psi independent of y.  All work is
done with log(phi) because phi decays through hundreds of e-folds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField

_TINY = np.finfo(float).tiny


class SnapError(ValueError):
    pass


@dataclass
class PsiField:
    field: ScalarField
    eps: float
    y_scale: float = 1.0

    @property
    def values(self) -> np.ndarray:
        return self.field.values


@dataclass
class NResult:
    value: float
    y1_row: float
    y2_row: float
    x_argmax: float


@dataclass
class ProfileFit:
    rate: float
    intercept: float
    correlation: float
    points: int


def log_phi(phi: ScalarField) -> np.ndarray:
    """log(phi) with -inf where phi <= 0."""
    v = phi.values
    out = np.full(v.shape, -np.inf)
    pos = v > 0
    out[pos] = np.log(v[pos])
    return out


def psi_from_phi(phi: ScalarField, eps: float, y_scale: float = 1.0) -> PsiField:
    """psi = exp(|Y| / (2 eps^2)) phi with Y = y / y_scale, formed in log space.

    Nodes with phi = 0 get psi = 0; the exponent is clamped so psi stays
    finite.
    """
    if not eps > 0:
        raise SnapError("eps must be positive")
    _, Y = phi.grid.mesh()
    lg = log_phi(phi) + 0.5 * np.abs(Y / y_scale) / eps**2
    lg = np.minimum(lg, np.log(np.finfo(float).max))
    psi = np.where(np.isfinite(lg), np.exp(lg), 0.0)
    return PsiField(ScalarField(phi.grid, psi, "psi"), eps, y_scale)


def phi_from_psi(psi: PsiField) -> ScalarField:
    _, Y = psi.field.grid.mesh()
    v = psi.values
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = np.exp(np.log(v[pos]) - 0.5 * np.abs(Y[pos] / psi.y_scale) / psi.eps**2)
    return ScalarField(psi.field.grid, out, "phi")


def n_metric(psi: PsiField, xi1: float, xi2: float, y1: float, y2: float) -> NResult:
    """sup over x in [xi1, xi2] of |psi(x,y1) - psi(x,y2)| / (psi(x,y1) + psi(x,y2)).

    y1, y2 are snapped to the nearest grid rows, which are reported back.
    Columns where both values vanish are skipped.
    """
    if not xi1 < xi2:
        raise SnapError("need xi1 < xi2")
    g = psi.field.grid
    xs = g.x.phys
    cols = np.nonzero((xs >= xi1) & (xs <= xi2))[0]
    if len(cols) == 0:
        raise SnapError(f"no grid columns in [{xi1:g}, {xi2:g}]")
    j1, j2 = int(g.y.nearest(y1)), int(g.y.nearest(y2))
    p1 = psi.values[cols, j1]
    p2 = psi.values[cols, j2]
    den = p1 + p2
    keep = den > 0
    if not keep.any():
        return NResult(0.0, float(g.y.phys[j1]), float(g.y.phys[j2]), float("nan"))
    # ratio of differences, formed without overflow for large psi
    q = np.abs(p1[keep] - p2[keep]) / den[keep]
    k = int(np.argmax(q))
    return NResult(float(q[k]), float(g.y.phys[j1]), float(g.y.phys[j2]), float(xs[cols][keep][k]))


def exp_profile_fit(phi: ScalarField, *, y: float | None = None, x: float | None = None,
                    lo: float = -np.inf, hi: float = np.inf) -> ProfileFit:
    """Fit log(phi) = c + rate * s along a grid row (fixed y) or column (fixed x).

    ``s`` runs over the other coordinate restricted to [lo, hi]; only nodes
    with phi > 0 are used.
    """
    if (y is None) == (x is None):
        raise SnapError("give exactly one of y= (row) or x= (column)")
    g = phi.grid
    lg = log_phi(phi)
    if y is not None:
        s, vals = g.x.phys, lg[:, int(g.y.nearest(y))]
    else:
        s, vals = g.y.phys, lg[int(g.x.nearest(x)), :]
    sel = (s >= lo) & (s <= hi) & np.isfinite(vals) & (vals > np.log(_TINY))
    n = int(sel.sum())
    if n < 8:
        raise SnapError(f"only {n} positive nodes on the line")
    rate, c = np.polyfit(s[sel], vals[sel], 1)
    r = float(np.corrcoef(s[sel], vals[sel])[0, 1])
    return ProfileFit(float(rate), float(c), r, n)
