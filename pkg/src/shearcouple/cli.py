"""Command-line pipeline: solve, classify, extract, then the requested analyses.

Runs are described by INI files with one section per stage::

    [run]        name, plot
    [flow]       spec                     e.g. power_law(beta=2), capped_linear
    [grid]       x_kind, nx, y_kind, ny, x_lo, x_hi, y_lo, y_hi, x_scale, y_scale
    [solver]     D, lam, lam_exponent, dt, steady_tol, max_steps, scheme,
                 x_boundary, safety, check_every, workers, origin_pin, obstacle,
                 allow_degenerate_lambda
    [boundaries] threshold, min_nodes, gap
    [fit]        window, beta
    [wkb]        X, x_range
    [mc]         probes, n_paths, seed, delta, sweep, dt, dt_min, eta, t_max,
                 traces, workers
    [snap]       stations, xi, y_limit, fit_span, profile_y, profile_x

Lists are comma separated; lists of pairs separate the pairs with ``;``.
``--config`` takes a path or the name of a bundled config (``--list`` shows
them).  Every command rewrites ``manifest.json`` in the output directory
with the SHA-256 of each file it knows about.

Exit codes: 0 success, 2 bad config, 3 solver did not converge,
4 an analysis precondition failed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .flows import FlowSpec, parse_flow
from .grid import Grid2D, ScalarField, build_grid, read_binary, write_binary
from .hjb import SolverConfig, SolverNotConverged, classify_control, solve_steady
from .montecarlo import McConfig, estimate_success, simulate_path, write_trace
from .regions import (
    RegionError, component_gaps, default_window, extract_boundaries, fit_entrance_exponent,
    predicted_alpha, snap_report,
)
from .snap import SnapError, exp_profile_fit, n_metric, psi_from_phi
from .wkb import (
    InconclusiveError, NoCausticError, Nondim, RayError, WkbDomainError,
    dimensional_boundaries, snap_integral,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ANALYSIS = 0, 2, 3, 4
COMMANDS = ("solve", "boundaries", "fit-scaling", "wkb", "mc", "snap", "plot", "all")
ANALYSIS_ERRORS = (RegionError, SnapError, WkbDomainError, NoCausticError, InconclusiveError,
                   RayError)

log = logging.getLogger("shearcouple")


class ConfigError(ValueError):
    pass


class AnalysisError(RuntimeError):
    pass


# -- config parsing -----------------------------------------------------------------


def _floats(n=None):
    def conv(text):
        vals = [float(t) for t in text.replace(",", " ").split()]
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers")
        return tuple(vals)
    return conv


def _pairs(text):
    out = []
    for part in text.split(";"):
        if part.strip():
            out.append(_floats(2)(part))
    if not out:
        raise ValueError("expected at least one pair")
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "run": {"name": str, "plot": _bool},
    "flow": {"spec": str},
    "grid": {"x_kind": str, "nx": int, "y_kind": str, "ny": int, "x_lo": float, "x_hi": float,
             "y_lo": float, "y_hi": float, "x_scale": float, "y_scale": float},
    "solver": {"D": float, "lam": float, "lam_exponent": float, "dt": float, "steady_tol": float,
               "max_steps": int, "scheme": str, "x_boundary": str, "safety": float,
               "check_every": int, "workers": int, "origin_pin": _bool, "obstacle": _bool,
               "allow_degenerate_lambda": _bool},
    "boundaries": {"threshold": float, "min_nodes": int, "gap": _floats(2)},
    "fit": {"window": _floats(2), "beta": float},
    "wkb": {"X": float, "x_range": _floats(2)},
    "mc": {"probes": _pairs, "n_paths": int, "seed": int, "delta": float, "sweep": _floats(),
           "dt": float, "dt_min": float, "eta": float, "t_max": float, "traces": int,
           "workers": int},
    "snap": {"stations": _pairs, "xi": _floats(2), "y_limit": float, "fit_span": float,
             "profile_y": float, "profile_x": _floats(2)},
}
REQUIRED = {"flow": ("spec",)}


@dataclass
class RunConfig:
    name: str
    flow: FlowSpec
    grid: Grid2D
    solver: SolverConfig
    sections: dict
    solve_key: str
    source: str
    plot: bool = True
    analyses: list = field(default_factory=list)

    def section(self, name: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"config has no [{name}] section")
        return self.sections[name]


def bundled_configs() -> list:
    root = resources.files("shearcouple") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def _read_text(ref: str) -> tuple:
    path = Path(ref)
    if path.is_file():
        return path.read_text(), str(path)
    name = ref[:-4] if ref.endswith(".ini") else ref
    res = resources.files("shearcouple") / "configs" / f"{name}.ini"
    if res.is_file():
        return res.read_text(), f"bundled:{name}"
    raise ConfigError(f"no config file or bundled config named {ref!r}")


def load_config(ref: str) -> RunConfig:
    """Parse and validate a config; every error is a :class:`ConfigError`."""
    text, source = _read_text(ref)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    sections = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        vals = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                vals[key] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from None
        sections[sec] = vals
    for sec, keys in REQUIRED.items():
        for key in keys:
            if key not in sections.get(sec, {}):
                raise ConfigError(f"missing [{sec}] {key}")
    run = sections.get("run", {})
    name = run.get("name", Path(source.split(":")[-1]).stem)
    try:
        flow = parse_flow(sections["flow"]["spec"])
        sv = dict(sections.get("solver", {}))
        solver = SolverConfig(**sv)
        gk = dict(sections.get("grid", {}))
        gkw = {k: gk[k] for k in ("x_lo", "x_hi", "y_lo", "y_hi", "x_scale", "y_scale") if k in gk}
        grid = build_grid(gk.get("x_kind", "unbounded"), gk.get("nx", 257),
                          gk.get("y_kind", "unbounded"), gk.get("ny", 257),
                          D=solver.D, lam=solver.lam if solver.lam > 0 else 1.0, **gkw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sections.setdefault("boundaries", {})
    _check_analyses(sections, flow)
    key_src = {s: {k: v for k, v in sections.get(s, {}).items() if k != "workers"}
               for s in ("flow", "grid", "solver")}
    solve_key = hashlib.sha256(json.dumps(key_src, sort_keys=True).encode()).hexdigest()
    analyses = [a for a in ("fit", "wkb", "mc", "snap") if a in sections]
    return RunConfig(name, flow, grid, solver, sections, solve_key, source,
                     run.get("plot", True), analyses)


def _check_analyses(sections: dict, flow: FlowSpec) -> None:
    """Catch settings that would only fail after the solve."""
    mc = sections.get("mc")
    if mc is not None:
        if "probes" not in mc:
            raise ConfigError("[mc] needs probes")
        try:
            _mc_config(mc, *mc["probes"][0])
        except ValueError as exc:
            raise ConfigError(f"[mc] {exc}") from None
    snap = sections.get("snap")
    if snap is not None and not flow.bounded:
        raise ConfigError("[snap] needs a bounded flow")
    fit = sections.get("fit")
    if fit is not None:
        w = fit.get("window")
        if w is not None and not 0 < w[0] < w[1]:
            raise ConfigError("[fit] window must satisfy 0 < lo < hi")
        if "beta" not in fit and flow.kind != "power_law":
            raise ConfigError("[fit] needs beta for a flow that is not a power law")


def _mc_config(mc: dict, x0: float, y0: float, seed_override=None, lam=1.0, D=2.0, lam_exp=None,
               x_boundary="killing"):
    kw = {k: mc[k] for k in ("n_paths", "delta", "dt", "dt_min", "eta", "t_max", "workers") if k in mc}
    if "sweep" in mc:
        kw["sweep"] = tuple(mc["sweep"])
    seed = mc.get("seed", 0) if seed_override is None else seed_override
    return McConfig(float(x0), float(y0), seed=int(seed), D=D, lam=lam, lam_exponent=lam_exp,
                    x_boundary=x_boundary, **kw)


# -- artifacts ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")
    return path


def _plain(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _write_columns(path: Path, header: str, cols) -> Path:
    data = np.column_stack([np.asarray(c, dtype=float) for c in cols]) if len(cols[0]) else \
        np.zeros((0, len(cols)))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def write_manifest(out: Path, run: RunConfig) -> Path:
    """List every known artifact in ``out`` with its SHA-256."""
    path = out / "manifest.json"
    files = {}
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = _sha256(p)
    data = {"config": run.name, "source": run.source, "solve_key": run.solve_key, "files": files}
    return _write_json(path, data)


# -- stages ------------------------------------------------------------------------------------


class Pipeline:
    def __init__(self, run: RunConfig, out: Path, seed: int | None = None):
        self.run, self.out, self.seed = run, out, seed
        self._phi = None
        self._region = None

    # solve -----------------------------------------------------------------------
    def phi(self) -> ScalarField:
        if self._phi is None:
            self._phi = self._cached_phi() or self.solve()
        return self._phi

    def _cached_phi(self):
        meta = self.out / "solve.json"
        dump = self.out / "phi.bin"
        if not (meta.is_file() and dump.is_file()):
            return None
        try:
            info = json.loads(meta.read_text())
        except ValueError:
            return None
        if info.get("solve_key") != self.run.solve_key:
            return None
        values = read_binary(dump)
        if values.shape != self.run.grid.shape:
            return None
        log.info("reusing solved field from %s", dump)
        return ScalarField(self.run.grid, values, "phi")

    def solve(self) -> ScalarField:
        run = self.run
        log.info("solving %s on %dx%d (%s scheme)", run.flow.describe(), *run.grid.shape,
                 run.solver.scheme)
        t0 = time.perf_counter()
        try:
            res = solve_steady(run.flow, run.grid, run.solver)
        except SolverNotConverged as exc:
            self.out.mkdir(parents=True, exist_ok=True)
            _write_columns(self.out / "convergence.csv", "step,residual",
                           list(zip(*exc.history)) if exc.history else [[], []])
            raise
        log.info("converged after %d steps (dt %.3g) in %.1f s", res.steps, res.dt,
                 time.perf_counter() - t0)
        self.out.mkdir(parents=True, exist_ok=True)
        write_binary(res.phi, self.out / "phi.bin")
        write_binary(res.sigma.sigma(), self.out / "sigma.bin")
        res.write_log(self.out / "convergence.csv")
        _write_json(self.out / "solve.json", {
            "solve_key": run.solve_key,
            "flow": run.flow.describe(),
            "grid": {"x": run.grid.x.describe(), "y": run.grid.y.describe()},
            "steps": res.steps,
            "dt": res.dt,
            "final_residual": res.final_residual,
            "scheme": run.solver.scheme,
            "x_boundary": run.solver.x_boundary,
        })
        self._phi = res.phi
        return res.phi

    # regions ---------------------------------------------------------------------
    def region(self):
        if self._region is None:
            opts = self.run.sections["boundaries"]
            reg = classify_control(self.phi(), opts.get("threshold", 0.0), D=self.run.solver.D)
            self._region = extract_boundaries(reg, opts.get("threshold", 0.0),
                                              opts.get("min_nodes", 1))
        return self._region

    def boundaries(self):
        reg = self.region()
        reg.write_csv(self.out / "boundaries.csv")
        gaps = component_gaps(reg)
        info = {
            "components": [
                {"label": c.label, "nodes": c.nodes, "x_extent": c.x_extent, "y_extent": c.y_extent}
                for c in reg.components
            ],
            "gaps": gaps,
            "symmetric": reg.is_symmetric(),
            "off_nodes": int(reg.off.sum()),
        }
        want = self.run.sections["boundaries"].get("gap")
        if want is not None:
            lo, hi = want
            info["gap_check"] = {
                "interval": want,
                "components_right": sum(1 for c in reg.components if c.x_extent[1] > 0),
                "contains_interval": any(g0 < lo and g1 > hi for g0, g1 in gaps),
            }
        _write_json(self.out / "regions.json", info)

    # analyses ------------------------------------------------------------------------
    def fit(self):
        run = self.run
        opts = run.sections["fit"]
        comp = self.region().main_component()
        window = tuple(opts.get("window", default_window(run.grid)))
        fit = fit_entrance_exponent(comp.x, comp.b, window, min_spacing=run.grid.x.min_spacing)
        beta = opts.get("beta", run.flow.beta)
        lam_exp = run.solver.lam_exponent or 0.0
        alpha = predicted_alpha(beta, lam_exp)
        sel = (comp.x >= window[0]) & (comp.x <= window[1])
        _write_columns(self.out / "entrance.csv", "x,b", [comp.x[sel], comp.b[sel]])
        fit.to_json(self.out / "scaling_fit.json", beta=beta, Lambda=lam_exp, predicted_alpha=alpha,
                    relative_error=(fit.exponent - alpha) / alpha)
        log.info("entrance exponent %.4f (predicted %.4f)", fit.exponent, alpha)

    def wkb(self):
        run = self.run
        opts = run.sections["wkb"]
        if run.flow.kind != "power_law":
            raise AnalysisError("the far-field comparison is set up for power-law flows")
        comp = self.region().main_component()
        lo, hi = opts.get("x_range", (0.1, 4.0))
        sel = (comp.x >= lo) & (comp.x <= hi)
        if sel.sum() < 2:
            raise AnalysisError(f"no boundary columns in [{lo:g}, {hi:g}]")
        x, a, b = comp.x[sel], comp.a[sel], comp.b[sel]
        X = opts.get("X", 1.0)
        w = dimensional_boundaries(run.flow, x, run.solver.D, run.solver.lam, X)
        _write_columns(self.out / "wkb_compare.csv", "x,a,b,a0,abar,b_wkb",
                       [x, a, b, w["a0"], w["abar"], w["b"]])
        between = (w["a0"] < a) & (a < w["abar"])
        _write_json(self.out / "wkb.json", {
            "X": X, "eps": w["eps"], "x_range": [lo, hi], "points": int(len(x)),
            "exit_between_a0_and_abar": int(between.sum()),
            "all_between": bool(between.all()),
        })
        log.info("exit boundary between a0 and abar at %d of %d columns", between.sum(), len(x))

    def mc(self):
        run = self.run
        opts = run.sections["mc"]
        phi = self.phi()
        policy = classify_control(phi, run.sections["boundaries"].get("threshold", 0.0),
                                  D=run.solver.D)
        g = run.grid
        rows = []
        traces = opts.get("traces", 0)
        for k, (x, y) in enumerate(opts["probes"]):
            i, j = int(g.x.nearest(x)), int(g.y.nearest(y))
            xn, yn = float(g.x.phys[i]), float(g.y.phys[j])
            cfg = _mc_config(opts, xn, yn, self.seed, run.solver.lam, run.solver.D,
                             run.solver.lam_exponent, run.solver.x_boundary)
            t0 = time.perf_counter()
            try:
                res = estimate_success(policy, run.flow, cfg)
            except ValueError as exc:
                raise AnalysisError(f"probe ({x:g}, {y:g}): {exc}") from None
            pde = float(phi.values[i, j])
            tol = 3 * res.stderr + res.bias_allowance
            rows.append({
                "probe": [x, y], "node": [xn, yn], "phi": pde, "p_hat": res.p_hat,
                "stderr": res.stderr, "bias_allowance": res.bias_allowance,
                "abs_error": abs(res.p_hat - pde), "tolerance": tol,
                "agrees": abs(res.p_hat - pde) <= tol, "counts": res.counts,
                "sweep": res.sweep, "winding": res.winding,
            })
            log.info("probe (%.3g, %.3g): phi %.4g, p_hat %.4g +- %.2g (%.1f s)", xn, yn, pde,
                     res.p_hat, res.stderr, time.perf_counter() - t0)
            for t in range(traces if k == 0 else 0):
                outcome = simulate_path(policy, run.flow, cfg, index=t, record=200_000)
                write_trace(outcome, self.out / f"mc_trace_{t}.csv")
        seed = opts.get("seed", 0) if self.seed is None else self.seed
        _write_json(self.out / "mc.json", {"seed": seed, "probes": rows,
                                           "all_agree": all(r["agrees"] for r in rows)})

    def snap(self):
        run = self.run
        opts = run.sections["snap"]
        phi = self.phi()
        reg = self.region()
        nd = Nondim.for_flow(run.flow, run.solver.D, run.solver.lam)
        stations = opts.get("stations", ())
        xi = opts.get("xi", (-math.inf, run.flow.x_m))
        y_limit = opts.get("y_limit")
        rep = snap_report(reg, phi, run.flow, stations, xi, nd.eps, nd.y_scale, y_limit,
                          opts.get("fit_span", 1.0))
        psi = psi_from_phi(phi, nd.eps, nd.y_scale)
        n_rows = []
        for y1, y2 in stations:
            r = n_metric(psi, xi[0], xi[1], y1 * nd.y_scale, y2 * nd.y_scale)
            n_rows.append({"stations": [y1, y2], "rows": [r.y1_row / nd.y_scale, r.y2_row / nd.y_scale],
                           "value": r.value, "x_argmax": r.x_argmax})
        info = {
            "eps": nd.eps, "y_scale": nd.y_scale, "x_m": rep.x_m, "degenerate": rep.degenerate,
            "y_m": rep.y_m, "filament_rate": rep.decay_rate,
            "filament_rate_target": 0.5 / nd.eps**2, "n_metric": n_rows,
        }
        integral = snap_integral(run.flow)
        info["snap_integral"] = {"verdict": integral.verdict, "value": integral.value}
        if rep.degenerate:
            im = int(run.grid.x.nearest(rep.x_m))
            ys = run.grid.y.phys
            keep = ys < 0
            _write_columns(self.out / "snap_filament.csv", "y,phi", [ys[keep], phi.values[im, keep]])
        if "profile_y" in opts:
            lo, hi = opts.get("profile_x", (-3.0, -1.0))
            yp = opts["profile_y"] * nd.y_scale
            f = exp_profile_fit(phi, y=yp, lo=lo, hi=hi)
            j = int(run.grid.y.nearest(yp))
            info["profile"] = {"y": opts["profile_y"], "row": float(run.grid.y.phys[j]) / nd.y_scale,
                               "x_window": [lo, hi], "rate": f.rate,
                               "rate_target": math.sqrt(2.0) / nd.eps**2,
                               "correlation": f.correlation, "points": f.points}
            _write_columns(self.out / "snap_profile.csv", "x,phi", [run.grid.x.phys, phi.values[:, j]])
        _write_json(self.out / "snap.json", info)
        log.info("snap: degenerate=%s, filament rate %s", rep.degenerate, rep.decay_rate)

    def plot(self):
        from .plotting import render_all

        written = render_all(self.out, self.run)
        log.info("wrote %d plots", len(written))


STAGES = {
    "fit-scaling": "fit", "wkb": "wkb", "mc": "mc", "snap": "snap",
}
SECTION = {"fit-scaling": "fit", "wkb": "wkb", "mc": "mc", "snap": "snap"}


def execute(command: str, run: RunConfig, out: Path, seed: int | None = None) -> int:
    if command in SECTION and SECTION[command] not in run.sections:
        raise ConfigError(f"'{command}' needs a [{SECTION[command]}] section")
    pipe = Pipeline(run, out, seed)
    if command != "plot":
        out.mkdir(parents=True, exist_ok=True)
    try:
        if command == "plot":
            pipe.plot()
        elif command == "solve":
            pipe.solve()
        else:
            pipe.phi()
            pipe.boundaries()
            if command == "all":
                for name in run.analyses:
                    getattr(pipe, name)()
                if run.plot:
                    write_manifest(out, run)
                    pipe.plot()
            elif command != "boundaries":
                getattr(pipe, STAGES[command])()
    finally:
        if out.is_dir():
            write_manifest(out, run)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="shearcouple", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("--config", help="config file or bundled config name")
    parser.add_argument("--out", help="output directory (default out/<name>)")
    parser.add_argument("--seed", type=int, help="Monte Carlo seed (overrides the config)")
    parser.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    parser.add_argument("--list", action="store_true", help="list the bundled configs and exit")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.list:
        print("\n".join(bundled_configs()))
        return EXIT_OK
    if args.command is None or args.config is None:
        parser.print_usage(sys.stderr)
        print("error: a command and --config are required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run = load_config(args.config)
        if args.command in SECTION and SECTION[args.command] not in run.sections:
            raise ConfigError(f"'{args.command}' needs a [{SECTION[args.command]}] section")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path("out") / run.name
    try:
        return execute(args.command, run, out, args.seed)
    except SolverNotConverged as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except ANALYSIS_ERRORS + (AnalysisError,) as exc:
        log.error("analysis failed: %s", exc)
        return EXIT_ANALYSIS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
