"""Steady success probability phi by timestepping the obstacle-form equation

    phi_t = v(x) phi_y + D [phi_xx]^+ - lam(x) phi,   phi(0, 0) = 1,

from phi = 1 at the origin node and 0 elsewhere.  The field obeys
phi(-x, -y) = phi(x, y), so only the half plane x >= 0 is stepped; the
column left of x = 0 is column x_1 read with y reversed.

Two explicit schemes are provided:

* ``split``: semi-Lagrangian advection (linear interpolation at y + v dt),
  then forward-Euler diffusion where the curvature is non-negative, then the
  exact killing factor exp(-lam dt).  Suited to unbounded (tanh) grids.
* ``upwind``: one forward-Euler step with first-order upwinding in y and the
  three-point stencil in x.  Suited to bounded boxes.

Outermost y rows are held at zero (killing / far field).  The outermost x
column is either held at zero or reflecting.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

with warnings.catch_warnings():
    # an outdated TBB only disables that layer; the fallbacks are fine
    warnings.simplefilter("ignore")
    import numba
    from numba import njit, prange

from .flows import FlowSpec, eval_flow
from .grid import Grid2D, ScalarField, second_difference_x
from .regions import ControlRegion

SCHEMES = ("split", "upwind")
X_BOUNDARIES = ("killing", "reflecting")


class SolverConfigError(ValueError):
    """Inconsistent solver settings (stability limit, lam profile, grid)."""


class SolverNotConverged(RuntimeError):
    """Raised when max_steps is exhausted; carries the residual history."""

    def __init__(self, msg, history, partial=None):
        super().__init__(msg)
        self.history = history
        self.partial = partial


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`solve_steady`.

    The marking rate is ``lam * |x|**lam_exponent`` when ``lam_exponent`` is
    set, else the constant ``lam``.  ``dt=None`` picks ``safety`` times the
    explicit stability limit of the chosen scheme.
    """

    D: float = 2.0
    lam: float = 1.0
    lam_exponent: float | None = None
    dt: float | None = None
    steady_tol: float = 1e-8
    max_steps: int = 20_000_000
    scheme: str = "split"
    x_boundary: str = "killing"
    safety: float = 0.9
    origin_pin: bool = True
    obstacle: bool = True
    check_every: int = 400
    workers: int | None = None
    allow_degenerate_lambda: bool = False

    def __post_init__(self):
        if not self.D > 0:
            raise SolverConfigError("D must be positive")
        if not self.lam >= 0:
            raise SolverConfigError("lam must be non-negative")
        if self.dt is not None and not self.dt > 0:
            raise SolverConfigError("dt must be positive")
        if not self.steady_tol > 0:
            raise SolverConfigError("steady_tol must be positive")
        if self.scheme not in SCHEMES:
            raise SolverConfigError(f"scheme must be one of {SCHEMES}")
        if self.x_boundary not in X_BOUNDARIES:
            raise SolverConfigError(f"x_boundary must be one of {X_BOUNDARIES}")
        if not 0 < self.safety <= 0.9:
            raise SolverConfigError("safety factor must lie in (0, 0.9]")
        if self.max_steps < 1 or self.check_every < 1:
            raise SolverConfigError("max_steps and check_every must be >= 1")

    def marking_rate(self, x) -> np.ndarray:
        x = np.abs(np.asarray(x, dtype=float))
        if self.lam_exponent is None:
            return np.full_like(x, self.lam)
        return self.lam * x**self.lam_exponent


@dataclass
class SolveResult:
    phi: ScalarField
    sigma: ControlRegion
    steps: int
    final_residual: float
    dt: float
    history: list = field(default_factory=list, repr=False)

    def write_log(self, path) -> None:
        """Convergence log: one ``step,residual`` row per check."""
        write_history(self.history, path)


def write_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,residual\n")
        for step, res in history:
            fh.write(f"{step:d},{res:.17g}\n")


# -- kernels --------------------------------------------------------------------
# Arrays are half-plane fields f[i, j] with i = 0 on x = 0.  Each kernel runs
# `nsteps` steps ping-ponging between f and g, so the newest iterate is in f
# when nsteps is even and in g otherwise.  The return value is the sup-norm
# change of the last step.  Every node is computed independently and the
# final max is order-free, so results do not depend on the thread count.


@njit(cache=True)
def _curv(src, i, j, xs, nx, ny):
    fc = src[i, j]
    if i == 0:
        fl = src[1, ny - 1 - j]
        hm = xs[1] - xs[0]
    else:
        fl = src[i - 1, j]
        hm = xs[i] - xs[i - 1]
    if i == nx - 1:
        # only reached when reflecting: mirror ghost
        fr = src[i - 1, j]
        hp = hm
    else:
        fr = src[i + 1, j]
        hp = xs[i + 1] - xs[i]
    return 2.0 * ((fr - fc) / hp - (fc - fl) / hm) / (hp + hm)


@njit(parallel=True, cache=True)
def _upwind_kernel(f, g, xs, ys, v, kill, D, dt, nsteps, reflect, jc, pin, obstacle):
    nx, ny = f.shape
    colres = np.zeros(nx)
    for s in range(nsteps):
        src = f if s % 2 == 0 else g
        dst = g if s % 2 == 0 else f
        for i in prange(nx):
            dst[i, 0] = 0.0
            dst[i, ny - 1] = 0.0
            if i == nx - 1 and not reflect:
                for j in range(1, ny - 1):
                    dst[i, j] = 0.0
                continue
            vi = v[i]
            for j in range(1, ny - 1):
                fc = src[i, j]
                d2 = _curv(src, i, j, xs, nx, ny)
                if obstacle and d2 < 0.0:
                    d2 = 0.0
                if vi > 0:
                    adv = vi * (src[i, j + 1] - fc) / (ys[j + 1] - ys[j])
                else:
                    adv = vi * (fc - src[i, j - 1]) / (ys[j] - ys[j - 1])
                new = (fc + dt * (adv + D * d2)) * kill[i]
                dst[i, j] = min(max(new, 0.0), 1.0)
        if pin:
            dst[0, jc] = 1.0
    last = f if nsteps % 2 == 0 else g
    prev = g if nsteps % 2 == 0 else f
    for i in prange(nx):
        m = 0.0
        for j in range(ny):
            d = abs(last[i, j] - prev[i, j])
            if d > m:
                m = d
        colres[i] = m
    return colres.max()


@njit(parallel=True, cache=True)
def _split_kernel(f, g, a, xs, ys, v, kill, D, dt, nsteps, reflect, jc, pin, obstacle):
    nx, ny = f.shape
    colres = np.zeros(nx)
    for s in range(nsteps):
        src = f if s % 2 == 0 else g
        dst = g if s % 2 == 0 else f
        # (1) semi-Lagrangian advection: a(x, y) = src(x, y + v dt)
        for i in prange(nx):
            shift = v[i] * dt
            a[i, 0] = 0.0
            a[i, ny - 1] = 0.0
            k = 0
            for j in range(1, ny - 1):
                yd = ys[j] + shift
                if yd <= ys[0] or yd >= ys[ny - 1]:
                    a[i, j] = 0.0  # departure beyond the grid: far-field zero
                    continue
                while ys[k + 1] < yd:
                    k += 1
                while ys[k] > yd:
                    k -= 1
                t = (yd - ys[k]) / (ys[k + 1] - ys[k])
                a[i, j] = (1.0 - t) * src[i, k] + t * src[i, k + 1]
        # (2) diffusion where convex, (3) killing, (4) pin, clip
        for i in prange(nx):
            dst[i, 0] = 0.0
            dst[i, ny - 1] = 0.0
            if i == nx - 1 and not reflect:
                for j in range(1, ny - 1):
                    dst[i, j] = 0.0
                continue
            for j in range(1, ny - 1):
                d2 = _curv(a, i, j, xs, nx, ny)
                if obstacle and d2 < 0.0:
                    d2 = 0.0
                new = (a[i, j] + dt * D * d2) * kill[i]
                dst[i, j] = min(max(new, 0.0), 1.0)
        if pin:
            dst[0, jc] = 1.0
    last = f if nsteps % 2 == 0 else g
    prev = g if nsteps % 2 == 0 else f
    for i in prange(nx):
        m = 0.0
        for j in range(ny):
            d = abs(last[i, j] - prev[i, j])
            if d > m:
                m = d
        colres[i] = m
    return colres.max()


# -- setup helpers ----------------------------------------------------------------


def _velocity(flow: FlowSpec | None, x) -> np.ndarray:
    """v on the nodes; ``flow=None`` stands for a fluid at rest."""
    if flow is None:
        return np.zeros_like(np.asarray(x, dtype=float))
    return np.asarray(eval_flow(flow, x), dtype=float)


def _flow_exponent(flow: FlowSpec | None) -> float:
    """Power of |x| governing v near the origin."""
    if flow is None:
        return math.inf
    if flow.kind == "power_law":
        return flow.beta
    return 1.0


def stable_dt(grid: Grid2D, flow: FlowSpec | None, cfg: SolverConfig) -> float:
    """Largest dt the explicit scheme tolerates (before the safety factor)."""
    h = grid.x.min_spacing
    inv = 2.0 * cfg.D / h**2
    if cfg.scheme == "upwind":
        vmax = float(np.max(np.abs(_velocity(flow, grid.x.phys))))
        inv += vmax / grid.y.min_spacing
    return 1.0 / inv


def _check(grid: Grid2D, flow: FlowSpec | None, cfg: SolverConfig) -> float:
    if not grid.symmetric:
        raise SolverConfigError("the half-plane reduction needs a negation-symmetric grid")
    if cfg.lam_exponent is not None:
        beta = _flow_exponent(flow)
        if not beta > cfg.lam_exponent:
            msg = (f"marking exponent {cfg.lam_exponent:g} is not below the flow exponent "
                   f"{beta:g}; the control problem degenerates")
            if not cfg.allow_degenerate_lambda:
                raise SolverConfigError(msg)
            warnings.warn(msg, stacklevel=3)
    limit = stable_dt(grid, flow, cfg)
    if cfg.dt is None:
        return cfg.safety * limit
    if cfg.dt > cfg.safety * limit:
        raise SolverConfigError(
            f"dt={cfg.dt:g} exceeds the stability bound {cfg.safety:g} x {limit:.6g}"
        )
    return cfg.dt


def _set_workers(workers: int | None) -> None:
    if workers is not None:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


class _Stepper:
    """Half-plane state plus the kernel arguments."""

    def __init__(self, grid: Grid2D, flow: FlowSpec | None, cfg: SolverConfig):
        self.grid, self.cfg = grid, cfg
        self.dt = _check(grid, flow, cfg)
        self.i0 = grid.x.center
        xs = np.ascontiguousarray(grid.x.phys[self.i0:])
        self.xs, self.ys = xs, np.ascontiguousarray(grid.y.phys)
        self.v = _velocity(flow, xs)
        self.kill = np.exp(-cfg.marking_rate(xs) * self.dt)
        self.jc = grid.y.center
        shape = (len(xs), grid.y.n)
        self.f = np.zeros(shape)
        self.g = np.zeros(shape)
        self.a = np.zeros(shape) if cfg.scheme == "split" else None

    def load(self, full: np.ndarray) -> None:
        self.f[:] = full[self.i0:]

    def unload(self) -> np.ndarray:
        half = self.f
        mirror = half[:0:-1, ::-1]  # phi(-x, y) = phi(x, -y)
        return np.concatenate([mirror, half], axis=0)

    def advance(self, nsteps: int) -> float:
        cfg = self.cfg
        reflect = cfg.x_boundary == "reflecting"
        args = (self.xs, self.ys, self.v, self.kill, cfg.D, self.dt, nsteps,
                reflect, self.jc, cfg.origin_pin, cfg.obstacle)
        if cfg.scheme == "split":
            res = _split_kernel(self.f, self.g, self.a, *args)
        else:
            res = _upwind_kernel(self.f, self.g, *args)
        if nsteps % 2:
            self.f, self.g = self.g, self.f
        return float(res)


def _step(phi: ScalarField, flow, cfg: SolverConfig, scheme: str) -> ScalarField:
    cfg = replace(cfg, scheme=scheme)
    _set_workers(cfg.workers)
    st = _Stepper(phi.grid, flow, cfg)
    st.load(phi.values)
    st.advance(1)
    return ScalarField(phi.grid, st.unload(), "phi")


def step_split(phi: ScalarField, flow: FlowSpec | None, cfg: SolverConfig) -> ScalarField:
    """One operator-split step (advect, diffuse where convex, kill, pin)."""
    return _step(phi, flow, cfg, "split")


def step_upwind(phi: ScalarField, flow: FlowSpec | None, cfg: SolverConfig) -> ScalarField:
    """One explicit upwind step of the same equation."""
    return _step(phi, flow, cfg, "upwind")


def initial_field(grid: Grid2D) -> ScalarField:
    values = np.zeros(grid.shape)
    values[grid.origin] = 1.0
    return ScalarField(grid, values, "phi")


def solve_steady(flow: FlowSpec | None, grid: Grid2D, cfg: SolverConfig,
                 initial: ScalarField | None = None) -> SolveResult:
    """Timestep to steady state.

    Stops once the sup-norm change per unit time drops below
    ``steady_tol * max(phi)``.  Raises :class:`SolverNotConverged` with the
    (step, residual) history if ``max_steps`` runs out first.
    """
    _set_workers(cfg.workers)
    st = _Stepper(grid, flow, cfg)
    st.load((initial or initial_field(grid)).values)
    history = []
    steps, res = 0, math.inf
    while steps < cfg.max_steps:
        k = min(cfg.check_every, cfg.max_steps - steps)
        change = st.advance(k)
        steps += k
        res = change / st.dt
        history.append((steps, res))
        if res < cfg.steady_tol * max(float(st.f.max()), 1e-300):
            break
    else:
        raise SolverNotConverged(
            f"no steady state after {steps} steps (residual {res:.3g}/time, "
            f"tolerance {cfg.steady_tol:g})",
            history,
            ScalarField(grid, st.unload(), "phi"),
        )
    phi = ScalarField(grid, st.unload(), "phi")
    return SolveResult(phi, classify_control(phi, D=cfg.D), steps, res, st.dt, history)


def classify_control(phi: ScalarField, threshold: float = 0.0, D: float = 2.0) -> ControlRegion:
    """Bang-bang control: diffusion on where phi_xx >= -threshold."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    curv = second_difference_x(phi).values
    return ControlRegion(phi.grid, curv >= -threshold, D=D, curvature=curv)

