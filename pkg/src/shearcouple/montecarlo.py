"""Pathwise check of phi: simulate the controlled process

    dX = sigma(X, Y) dB,   dY = v(X) dt,

with sigma read from a solved control field, until it enters a small ball
around the origin (success), the exponential clock rings (marked), it
leaves the grid, or T_max passes.

Every path reseeds the generator from (seed, path index), so results do not
depend on how paths are spread over threads.  The step shrinks like r^2 near
the origin so that a diffusive step cannot jump over the target.  Paths
follow identical trajectories for every ball radius in ``deltas``; one
simulation therefore yields the whole delta sweep, and the hit probability
is monotone in delta by construction.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    import numba
    from numba import njit, prange

from .flows import FlowSpec
from .regions import ControlRegion

HIT, MARKED, TIMED_OUT, EXITED = 0, 1, 2, 3
_KIND_CODE = {"power_law": 0, "capped_linear": 1, "flat_gap": 2, "capped_parabola": 3, "tabulated": 4}


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.  ``t_max=None`` means 20 / lam.

    ``delta`` is the target radius; ``sweep`` lists the multiples of delta
    reported alongside it.  ``dt`` is the step far from the origin; near it
    the step is (eta r)^2 / (2 D), floored at ``dt_min``.  With reflecting
    x walls a path mirrors back into the grid instead of exiting sideways.
    """

    x0: float
    y0: float
    n_paths: int = 100_000
    seed: int = 0
    delta: float = 0.02
    sweep: tuple = (0.5, 1.0, 2.0)
    dt: float = 1e-3
    dt_min: float = 1e-8
    eta: float = 0.25
    D: float = 2.0
    lam: float = 1.0
    lam_exponent: float | None = None
    t_max: float | None = None
    chunk: int = 4096
    workers: int | None = None
    x_boundary: str = "killing"

    def __post_init__(self):
        if not self.dt > 0 or not self.dt_min > 0 or self.dt_min > self.dt:
            raise ValueError("need 0 < dt_min <= dt")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.delta > 0 or not self.D > 0 or not self.lam >= 0:
            raise ValueError("delta, D must be positive and lam non-negative")
        if 1.0 not in self.sweep or min(self.sweep) <= 0:
            raise ValueError("sweep must contain 1.0 and only positive factors")
        if self.x_boundary not in ("killing", "reflecting"):
            raise ValueError("x_boundary must be 'killing' or 'reflecting'")

    @property
    def horizon(self) -> float:
        if self.t_max is not None:
            return self.t_max
        return 20.0 / self.lam if self.lam > 0 else math.inf


@dataclass
class McResult:
    p_hat: float
    stderr: float
    n_paths: int
    counts: dict
    delta: float
    sweep: dict = field(default_factory=dict)
    winding: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def bias_allowance(self) -> float:
        """Spread of p_hat over the delta sweep (largest minus smallest ball)."""
        vals = [v["p_hat"] for v in self.sweep.values()]
        return float(max(vals) - min(vals)) if vals else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bias_allowance"] = self.bias_allowance
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


@dataclass
class PathOutcome:
    status: int
    smallest_hit: int
    time: float
    winds: int
    spiral_depth: int
    trace: np.ndarray | None = None


# -- kernels ----------------------------------------------------------------------


@njit(cache=True)
def _velocity(x, kind, beta, xi, eta, amp, tab_x, tab_v):
    ax = abs(x)
    s = 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)
    if kind == 0:
        p = ax**beta
    elif kind == 1:
        p = min(ax, 1.0)
    elif kind == 2:
        if ax <= xi:
            p = ax
        elif ax < eta:
            p = xi
        else:
            p = ax - (eta - xi)
    elif kind == 3:
        m = min(ax, 1.0)
        p = m * (2.0 - m)
    else:
        p = np.interp(ax, tab_x, tab_v)
    return s * amp * p


@njit(cache=True)
def _nearest(axis, x):
    n = axis.shape[0]
    k = np.searchsorted(axis, x)
    if k <= 0:
        return 0
    if k >= n:
        return n - 1
    return k if axis[k] - x < x - axis[k - 1] else k - 1


@njit(cache=True)
def _run_path(seed, x0, y0, xs, ys, on, sig, lam, lam_exp, vpar, tab_x, tab_v,
              deltas, primary, dt0, dt_min, eta2, D, t_max, reflect, trace):
    """Returns (status, smallest ball index hit, time, winds, spiral depth, trace rows)."""
    np.random.seed(seed)
    clock = np.random.exponential(1.0)  # marked once the hazard reaches it
    kind, beta, xi, eta_g, amp = vpar[0], vpar[1], vpar[2], vpar[3], vpar[4]
    x, y, t, hazard = x0, y0, 0.0, 0.0
    k = deltas.shape[0]  # balls deltas[k:] have been entered
    status = -1
    theta = math.atan2(y, x)
    turned = 0.0
    wind = 0
    r0 = math.hypot(x, y)
    maxima = np.zeros(4)  # rolling per-wind maximum radius, newest last
    nmax = 0
    cur = r0
    snap_winds, snap_depth = 0, 0
    cap = trace.shape[0]
    rows = 0
    while True:
        r = math.hypot(x, y)
        while k > 0 and r < deltas[k - 1]:
            k -= 1
            if k == primary:
                # close the current wind and count the strictly shrinking tail
                m = np.empty(nmax + 1)
                m[:nmax] = maxima[4 - nmax:]
                m[nmax] = max(cur, r)
                depth = 0
                for q in range(nmax, 0, -1):
                    if m[q] < m[q - 1]:
                        depth += 1
                    else:
                        break
                snap_winds, snap_depth = wind, depth
        if k == 0:
            status = HIT
            break
        if hazard >= clock:
            status = MARKED
            break
        if t >= t_max:
            status = TIMED_OUT
            break
        if x < xs[0] or x > xs[-1] or y < ys[0] or y > ys[-1]:
            status = EXITED
            break
        s = sig if on[_nearest(xs, x), _nearest(ys, y)] else 0.0
        if rows < cap:
            trace[rows, 0] = t
            trace[rows, 1] = x
            trace[rows, 2] = y
            trace[rows, 3] = s
            rows += 1
        dt = eta2 * r * r / (2.0 * D)
        if dt > dt0:
            dt = dt0
        if dt < dt_min:
            dt = dt_min
        if lam_exp < 0:
            rate = lam
        else:
            rate = lam * abs(x) ** lam_exp
        hazard += rate * dt
        vx = _velocity(x, kind, beta, xi, eta_g, amp, tab_x, tab_v)
        if s > 0:
            x += s * math.sqrt(dt) * np.random.standard_normal()
            if reflect:
                if x < xs[0]:
                    x = 2.0 * xs[0] - x
                elif x > xs[-1]:
                    x = 2.0 * xs[-1] - x
        y += vx * dt
        t += dt
        th = math.atan2(y, x)
        d = th - theta
        if d > math.pi:
            d -= 2.0 * math.pi
        elif d < -math.pi:
            d += 2.0 * math.pi
        theta = th
        turned += d
        rn = math.hypot(x, y)
        if abs(turned) >= 2.0 * math.pi * (wind + 1):
            wind += 1
            maxima[:3] = maxima[1:]
            maxima[3] = cur
            nmax = min(nmax + 1, 4)
            cur = rn
        elif rn > cur:
            cur = rn
    return status, k, t, snap_winds, snap_depth, rows


@njit(parallel=True, cache=True)
def _run_chunk(seeds, x0, y0, xs, ys, on, sig, lam, lam_exp, vpar, tab_x, tab_v,
               deltas, primary, dt0, dt_min, eta2, D, t_max, reflect, status, kmin, winds, depth):
    empty = np.zeros((0, 4))
    for p in prange(seeds.shape[0]):
        st, k, _, w, dp, _ = _run_path(seeds[p], x0, y0, xs, ys, on, sig, lam, lam_exp,
                                       vpar, tab_x, tab_v, deltas, primary, dt0, dt_min,
                                       eta2, D, t_max, reflect, empty)
        status[p] = st
        kmin[p] = k
        winds[p] = w
        depth[p] = dp


# -- driver -----------------------------------------------------------------------


def path_seeds(seed: int, start: int, stop: int) -> np.ndarray:
    """32-bit generator seed for each path index, derived from (seed, index)."""
    return np.array(
        [np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1)[0] for i in range(start, stop)],
        dtype=np.int64,
    )


def _flow_params(flow: FlowSpec | None):
    if flow is None:
        return np.array([1.0, 1.0, 0.0, 0.0, 0.0]), np.zeros(2), np.zeros(2)
    code = _KIND_CODE[flow.kind]
    tab_x = tab_v = np.zeros(2)
    if flow.kind == "tabulated":
        tab_x = np.array([s[0] for s in flow.samples])
        tab_v = np.array([s[1] for s in flow.samples])
        # dense PCHIP table; np.interp between its nodes
        dense = np.linspace(tab_x[0], tab_x[-1], 8193)
        tab_v = np.asarray(flow._interp(dense), dtype=float)
        tab_x = dense
    vpar = np.array([code, flow.beta, flow.xi, flow.eta, flow.amplitude], dtype=float)
    return vpar, tab_x, tab_v


def _setup(policy: ControlRegion, flow, cfg: McConfig):
    g = policy.grid
    xs, ys = g.x.phys, g.y.phys
    if not (xs[0] <= cfg.x0 <= xs[-1] and ys[0] <= cfg.y0 <= ys[-1]):
        raise ValueError("start point lies outside the policy grid")
    # a ball smaller than half a cell is not resolved by the nearest-node policy
    if cfg.delta * min(cfg.sweep) < 0.5 * min(g.x.min_spacing, g.y.min_spacing):
        raise ValueError("every delta in the sweep must be at least half the grid spacing "
                         "at the origin")
    on = np.array(policy.on, dtype=bool)
    # the pinned origin node carries no control decision (its value is fixed);
    # left OFF it would trap paths that reach its cell outside a small ball
    on[g.origin] = True
    deltas = np.array(sorted(cfg.delta * f for f in cfg.sweep))
    primary = int(np.searchsorted(deltas, cfg.delta))
    vpar, tab_x, tab_v = _flow_params(flow)
    lam_exp = -1.0 if cfg.lam_exponent is None else float(cfg.lam_exponent)
    t_max = cfg.horizon
    if not math.isfinite(t_max):
        t_max = 1e300
    return (cfg.x0, cfg.y0, np.ascontiguousarray(xs), np.ascontiguousarray(ys),
            np.ascontiguousarray(on), math.sqrt(2.0 * cfg.D), cfg.lam, lam_exp,
            vpar, tab_x, tab_v, deltas, primary, cfg.dt, cfg.dt_min, cfg.eta**2, cfg.D, t_max,
            cfg.x_boundary == "reflecting")


def simulate_path(policy: ControlRegion, flow: FlowSpec | None, cfg: McConfig, index: int = 0,
                  record: int = 0) -> PathOutcome:
    """Run path ``index`` of the ensemble; keep up to ``record`` trace rows (t, x, y, sigma)."""
    args = _setup(policy, flow, cfg)
    seed = int(path_seeds(cfg.seed, index, index + 1)[0])
    trace = np.zeros((record, 4))
    st, k, t, w, dp, rows = _run_path(seed, *args, trace)
    primary = args[12]
    status = HIT if k <= primary else (st if st != HIT else MARKED)
    return PathOutcome(int(status), int(k), float(t), int(w), int(dp), trace[:rows] if record else None)


def write_trace(outcome: PathOutcome, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,x,y,sigma\n")
        for row in outcome.trace:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def estimate_success(policy: ControlRegion, flow: FlowSpec | None, cfg: McConfig) -> McResult:
    """Fraction of paths reaching the delta-ball before being marked."""
    if cfg.workers is not None:
        numba.set_num_threads(max(1, min(int(cfg.workers), numba.config.NUMBA_NUM_THREADS)))
    args = _setup(policy, flow, cfg)
    deltas, primary = args[11], args[12]
    n = cfg.n_paths
    status = np.empty(n, np.int64)
    kmin = np.empty(n, np.int64)
    winds = np.empty(n, np.int64)
    depth = np.empty(n, np.int64)
    for lo in range(0, n, cfg.chunk):
        hi = min(n, lo + cfg.chunk)
        _run_chunk(path_seeds(cfg.seed, lo, hi), *args,
                   status[lo:hi], kmin[lo:hi], winds[lo:hi], depth[lo:hi])
    hit = kmin <= primary
    counts = {
        "hit": int(hit.sum()),
        "marked": int(((~hit) & (status != TIMED_OUT) & (status != EXITED)).sum()),
        "timed_out": int(((~hit) & (status == TIMED_OUT)).sum()),
        "exited": int(((~hit) & (status == EXITED)).sum()),
    }
    p = counts["hit"] / n
    sweep = {}
    for idx, d in enumerate(deltas):
        ph = float(np.mean(kmin <= idx))
        sweep[f"{d:.6g}"] = {"delta": float(d), "p_hat": ph, "stderr": math.sqrt(ph * (1 - ph) / n)}
    return McResult(p, math.sqrt(p * (1 - p) / n), n, counts, cfg.delta, sweep,
                    winding_stats(winds[hit], depth[hit]), cfg.seed)


def winding_stats(winds: np.ndarray, depth: np.ndarray, tail: int = 3) -> dict:
    """Mean number of completed winds of successful paths and how many of
    those with at least ``tail`` winds (the last one ending at the target)
    shrink monotonically over their last ``tail`` winds.

    The spiral-in depth counts the trailing winds whose maximum radius is
    strictly below that of the wind before; depth >= tail - 1 means the last
    ``tail`` winds are strictly decreasing.
    """
    if len(winds) == 0:
        return {"successes": 0, "mean_winds": 0.0, "eligible": 0, "spiral_fraction": None}
    eligible = winds >= tail - 1
    frac = float(np.mean(depth[eligible] >= tail - 1)) if eligible.any() else None
    return {
        "successes": int(len(winds)),
        "mean_winds": float(np.mean(winds)),
        "mean_spiral_depth": float(np.mean(depth)),
        "eligible": int(eligible.sum()),
        "spiral_fraction": frac,
    }
