"""Tensor-product grids (uniform or tanh-stretched) and node-indexed fields.

An unbounded axis maps the whole real line onto the open computational
interval (-1, 1) through c = tanh(x / L).  Nodes sit at interior points of
that interval, so every physical coordinate is finite; the far-field zero
condition lives one cell beyond the outermost node.

A bounded axis is uniform by default.  Given a finite ``scale`` it uses the
same tanh map restricted to [lo, hi], which clusters nodes near the centre.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_NODES = 16
BINARY_MAGIC = b"SCFIELD1"
_HEADER = struct.Struct("<8sQQ")


@dataclass(frozen=True)
class Axis:
    kind: str  # "bounded" | "unbounded"
    n: int
    lo: float = -1.0
    hi: float = 1.0
    scale: float = 1.0  # tanh stretch; math.inf gives a uniform bounded axis
    comp: np.ndarray = field(default=None, repr=False, compare=False)
    phys: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes per axis, got {self.n}")
        if self.kind == "bounded":
            if not self.hi > self.lo:
                raise ValueError("bounded axis needs hi > lo")
            if self.n % 2:
                half = np.linspace(0.0, 1.0, (self.n + 1) // 2)
                comp = np.concatenate([-half[:0:-1], half])
            else:
                comp = np.linspace(-1.0, 1.0, self.n)
            if not self.scale > 0:
                raise ValueError("stretch scale must be positive")
            mid, rad = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
            if np.isfinite(self.scale):
                t = np.tanh(rad / self.scale)
                off = np.sign(comp) * self.scale * np.arctanh(np.abs(comp) * t)
                off[0], off[-1] = -rad, rad
            else:
                off = rad * comp
            phys = off if self.lo == -self.hi else mid + off
        elif self.kind == "unbounded":
            if not self.scale > 0:
                raise ValueError("stretch scale must be positive")
            k = np.arange(self.n) - (self.n - 1) / 2.0
            comp = 2.0 * k / (self.n + 1)
            phys = np.sign(comp) * self.scale * np.arctanh(np.abs(comp))
        else:
            raise ValueError(f"unknown axis kind {self.kind!r}")
        object.__setattr__(self, "comp", comp)
        object.__setattr__(self, "phys", phys)

    @classmethod
    def bounded(cls, lo: float, hi: float, n: int, scale: float = np.inf) -> "Axis":
        return cls("bounded", int(n), lo=float(lo), hi=float(hi), scale=float(scale))

    @classmethod
    def unbounded(cls, scale: float, n: int) -> "Axis":
        return cls("unbounded", int(n), scale=float(scale))

    @property
    def symmetric(self) -> bool:
        """Negation-closed with a node at 0 (odd count)."""
        return self.n % 2 == 1 and bool(np.array_equal(self.phys, -self.phys[::-1]))

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.phys)

    @property
    def min_spacing(self) -> float:
        return float(self.spacing.min())

    @property
    def center(self) -> int:
        return int(np.argmin(np.abs(self.phys)))

    @property
    def stretched(self) -> bool:
        return self.kind == "unbounded" or bool(np.isfinite(self.scale))

    def to_physical(self, c):
        c = np.asarray(c, dtype=float)
        if self.kind == "unbounded":
            return self.scale * np.arctanh(c)
        mid, rad = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
        if self.stretched:
            return mid + self.scale * np.arctanh(c * np.tanh(rad / self.scale))
        return mid + rad * c

    def to_computational(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "unbounded":
            return np.tanh(x / self.scale)
        mid, rad = 0.5 * (self.lo + self.hi), 0.5 * (self.hi - self.lo)
        if self.stretched:
            return np.tanh((x - mid) / self.scale) / np.tanh(rad / self.scale)
        return (x - mid) / rad

    def nearest(self, x) -> np.ndarray:
        """Index of the physically nearest node (clamped to the axis)."""
        x = np.asarray(x, dtype=float)
        hi = np.clip(np.searchsorted(self.phys, x), 1, self.n - 1)
        lo = hi - 1
        pick_hi = np.abs(self.phys[hi] - x) < np.abs(x - self.phys[lo])
        return np.where(pick_hi, hi, lo).astype(np.int64)

    def describe(self) -> dict:
        if self.kind == "bounded":
            out = {"kind": "bounded", "lo": self.lo, "hi": self.hi, "n": self.n}
            if self.stretched:
                out["scale"] = self.scale
            return out
        return {"kind": "unbounded", "scale": self.scale, "n": self.n}


@dataclass(frozen=True)
class Grid2D:
    x: Axis
    y: Axis

    @property
    def shape(self) -> tuple:
        return (self.x.n, self.y.n)

    @property
    def symmetric(self) -> bool:
        return self.x.symmetric and self.y.symmetric

    @property
    def origin(self) -> tuple:
        return (self.x.center, self.y.center)

    def mesh(self):
        return np.meshgrid(self.x.phys, self.y.phys, indexing="ij")


@dataclass
class ScalarField:
    """Values at grid nodes, indexed ``values[i, j]`` with i along x."""

    grid: Grid2D
    values: np.ndarray
    name: str = "field"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def copy(self, name: str | None = None) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), name or self.name)

    def at(self, x: float, y: float) -> float:
        """Value at the node nearest to (x, y)."""
        return float(self.values[self.grid.x.nearest(x), self.grid.y.nearest(y)])

    def interpolate(self, x: float, y: float) -> float:
        """Bilinear interpolation in physical coordinates."""
        xs, ys = self.grid.x.phys, self.grid.y.phys
        i = int(np.clip(np.searchsorted(xs, x) - 1, 0, len(xs) - 2))
        j = int(np.clip(np.searchsorted(ys, y) - 1, 0, len(ys) - 2))
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        v = self.values
        return float(
            (1 - tx) * (1 - ty) * v[i, j]
            + tx * (1 - ty) * v[i + 1, j]
            + (1 - tx) * ty * v[i, j + 1]
            + tx * ty * v[i + 1, j + 1]
        )


def build_grid(
    x_kind: str = "unbounded",
    nx: int = 257,
    y_kind: str = "unbounded",
    ny: int = 257,
    *,
    x_lo: float = -1.0,
    x_hi: float = 1.0,
    y_lo: float = -1.0,
    y_hi: float = 1.0,
    x_scale: float | None = None,
    y_scale: float | None = None,
    D: float = 2.0,
    lam: float = 1.0,
    symmetric: bool = True,
) -> Grid2D:
    """Build a grid; unbounded axes default to scale 2*(D/lam)**0.5.

    A bounded axis is uniform unless its scale is given, in which case the
    nodes follow the tanh map and cluster around the middle of the interval.

    With ``symmetric`` the node sets must be negation-closed, which needs
    odd node counts and centred bounded intervals.
    """
    default_scale = 2.0 * np.sqrt(D / lam)

    def make(kind, n, lo, hi, scale):
        if n <= 0:
            raise ValueError("node counts must be positive")
        if kind == "bounded":
            return Axis.bounded(lo, hi, n, np.inf if scale is None else scale)
        if kind == "unbounded":
            s = default_scale if scale is None else scale
            return Axis.unbounded(s, n)
        raise ValueError(f"unknown axis kind {kind!r}")

    grid = Grid2D(make(x_kind, nx, x_lo, x_hi, x_scale), make(y_kind, ny, y_lo, y_hi, y_scale))
    if symmetric and not grid.symmetric:
        raise ValueError("symmetric grid requested; use odd node counts and lo == -hi")
    return grid


def second_difference_x(f: ScalarField) -> ScalarField:
    """Three-point d2/dx2 on the physical (possibly stretched) x nodes.

    Exact for quadratics.  The two boundary columns reuse the stencil of
    their inner neighbour (one-sided second difference).
    """
    x = f.grid.x.phys
    v = f.values
    if len(x) < 3:
        raise ValueError("need at least 3 nodes in x")
    hm = (x[1:-1] - x[:-2])[:, None]
    hp = (x[2:] - x[1:-1])[:, None]
    inner = 2.0 * ((v[2:] - v[1:-1]) / hp - (v[1:-1] - v[:-2]) / hm) / (hp + hm)
    out = np.empty_like(v)
    out[1:-1] = inner
    out[0] = inner[0]
    out[-1] = inner[-1]
    return ScalarField(f.grid, out, "curvature")


# -- serialization ------------------------------------------------------------


def write_csv(f: ScalarField, path) -> Path:
    """Write ``x,y,value`` rows (x-major) with 17 significant digits."""
    path = Path(path)
    X, Y = f.grid.mesh()
    data = np.column_stack([X.ravel(), Y.ravel(), f.values.ravel()])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g")
    return path


def read_csv(path, grid: Grid2D, name: str = "field") -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return ScalarField(grid, data[:, 2].reshape(grid.shape), name)


def write_binary(f: ScalarField, path) -> Path:
    """Little-endian dump: 24-byte header (magic, nx, ny) then float64 values, x-major."""
    path = Path(path)
    nx, ny = f.grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, nx, ny))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, nx, ny = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise ValueError(f"{path}: not a field dump")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if vals.size != nx * ny:
        raise ValueError(f"{path}: truncated field dump")
    return vals.reshape(nx, ny).copy()
