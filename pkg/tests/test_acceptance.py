"""End-to-end acceptance runs (tens of minutes in total on one core).

Each criterion runs the bundled configs through the command-line pipeline
in a subprocess, checks the stated tolerance and wall-clock budget, and
records one verdict line that is printed in the terminal summary.
"""

import json
import math
import os
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from shearcouple import cli
from shearcouple.flows import FlowSpec
from shearcouple.grid import ScalarField, build_grid, read_binary
from shearcouple.hjb import SolverConfig, classify_control, solve_steady
from shearcouple.montecarlo import McConfig, estimate_success
from shearcouple.regions import extract_boundaries, predicted_alpha
from shearcouple.wkb import (
    action_on_exit_boundary, caustic, exit_boundary_a0, exit_ray, linear_caustic,
    power_law_a0, snap_integral,
)

pytestmark = pytest.mark.acceptance

BETAS = {"05": 0.5, "1": 1.0, "15": 1.5, "2": 2.0}


def run_cli(command, config, out, threads=1, timeout=3600):
    """Run the pipeline in a fresh interpreter; returns (exit code, seconds)."""
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "shearcouple.cli", command, "--config",
                           str(config), "--out", str(out), "--quiet"],
                          env=env, capture_output=True, text=True, timeout=timeout)
    return proc.returncode, time.perf_counter() - t0, proc.stderr


def with_workers(name, workers, path):
    """Copy of a bundled config that asks for ``workers`` threads everywhere."""
    text = cli._read_text(name)[0]
    for sec in ("[solver]", "[mc]"):
        if sec in text:
            text = text.replace(sec + "\n", f"{sec}\nworkers = {workers}\n")
    path.write_text(text)
    return path


def files_of(out):
    return json.loads((Path(out) / "manifest.json").read_text())["files"]


@pytest.fixture(scope="session")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


# -- 1: near-origin scaling law -------------------------------------------------------------

@pytest.fixture(scope="session")
def table_runs(work):
    rows = {}
    for tag, beta in BETAS.items():
        out = work / f"table1_beta{tag}"
        code, secs, err = run_cli("fit-scaling", f"table1_beta{tag}", out)
        assert code == 0, err
        fit = json.loads((out / "scaling_fit.json").read_text())
        rows[beta] = (fit["exponent"], fit["predicted_alpha"], secs, out)
    return rows


def test_criterion_1_scaling_exponents(table_runs):
    bad, parts = [], []
    for beta, (m, alpha, secs, _) in sorted(table_runs.items()):
        assert alpha == pytest.approx(predicted_alpha(beta), rel=1e-15)
        rel = (m - alpha) / alpha
        parts.append(f"beta={beta:g}: {m:.4f} vs {alpha:.4f} ({100 * rel:+.1f}%, {secs:.0f}s)")
        if abs(rel) > 0.05 or secs > 600:
            bad.append(beta)
    record(1, not bad, "; ".join(parts))
    assert not bad


def test_scheme_agreement_beta1(table_runs, work):
    """Split and upwind schemes on the bounded beta = 1 problem agree to 2%."""
    out = table_runs[1.0][3]
    upwind = read_binary(out / "phi.bin")
    run = cli.load_config("table1_beta1")
    split = solve_steady(run.flow, run.grid, SolverConfig(scheme="split", steady_tol=1e-6,
                                                          check_every=2000)).phi.values
    assert np.max(np.abs(split - upwind)) <= 0.02 * np.max(upwind)


# -- 2, 3: WKB consistency and the caustic ---------------------------------------------------

def test_criterion_2_wkb_consistency():
    worst_a0 = worst_s = worst_h = 0.0
    t0 = time.perf_counter()
    for beta in (0.5, 1.0, 1.5, 2.0):
        f = FlowSpec.power_law(beta)
        for x in (0.5, 1.0, 2.0):
            worst_a0 = max(worst_a0, abs(exit_boundary_a0(f, x) / power_law_a0(beta, x) - 1))
            ray = exit_ray(f, x)
            worst_s = max(worst_s, abs(ray.S[-1] / action_on_exit_boundary(f, x) - 1))
            worst_h = max(worst_h, float(np.max(np.abs(ray.hamiltonian(f) - 0.5))))
    secs = time.perf_counter() - t0
    ok = worst_a0 <= 1e-6 and worst_s <= 1e-6 and worst_h <= 1e-9
    record(2, ok, f"a0 rel {worst_a0:.1e}, S0 rel {worst_s:.1e}, H drift {worst_h:.1e} "
                  f"({secs:.1f}s)")
    assert ok


def test_criterion_3_caustic():
    lin = FlowSpec.linear()
    errs = []
    for x in (0.5, 1.0, 2.0):
        exact = -x**2 / (4 * math.sqrt(3))
        assert float(linear_caustic(x)) == pytest.approx(exact, rel=1e-14)
        errs.append(abs(caustic(lin, x, method="shooting") / exact - 1))
    ok = max(errs) <= 1e-4
    record(3, ok, "rel errors " + ", ".join(f"{e:.1e}" for e in errs))
    assert ok


# -- 4: far-field ordering ----------------------------------------------------------------------

def test_criterion_4_exit_between_a0_and_abar(work):
    out = work / "wkb_compare"
    code, secs, err = run_cli("wkb", "fig4_wkb_compare", out)
    assert code == 0, err
    info = json.loads((out / "wkb.json").read_text())
    data = np.loadtxt(out / "wkb_compare.csv", delimiter=",", skiprows=1)
    x, a, a0, abar = data[:, 0], data[:, 1], data[:, 3], data[:, 4]
    ok = bool(np.all((a0 < a) & (a < abar))) and info["all_between"] and secs <= 900
    record(4, ok, f"{info['exit_between_a0_and_abar']}/{info['points']} columns with "
                  f"a0 < a < abar on x in [{x[0]:.2f}, {x[-1]:.2f}] ({secs:.0f}s)")
    assert ok


def test_grid_refinement_moves_entrance_less_than_2_percent():
    """Entrance boundary of the linear-flow run at x = 1, n = 257 (the production
    resolution) vs 513."""
    vals = []
    for n in (257, 513):
        g = build_grid("unbounded", n, "unbounded", n)
        res = solve_steady(FlowSpec.linear(), g, SolverConfig(steady_tol=1e-7, check_every=2000))
        comp = extract_boundaries(res.sigma).main_component()
        vals.append(float(np.interp(1.0, comp.x, comp.b)))
    assert abs(vals[1] / vals[0] - 1) < 0.02


# -- 5: snap classification -------------------------------------------------------------------

def test_criterion_5_snap_integral():
    t0 = time.perf_counter()
    lin = snap_integral(FlowSpec.capped_linear())
    par = snap_integral(FlowSpec.capped_parabola())
    secs = time.perf_counter() - t0
    again = (snap_integral(FlowSpec.capped_linear()), snap_integral(FlowSpec.capped_parabola()))
    ok = (lin.verdict == "finite" and abs(lin.value - 2.0) < 1e-8
          and par.verdict == "divergent" and secs < 1.0 and again == (lin, par))
    record(5, ok, f"capped_linear {lin.verdict} integral {lin.value:.10f}; capped_parabola "
                  f"{par.verdict} ({secs:.2f}s)")
    assert ok


# -- 6: snap numerics ----------------------------------------------------------------------------

@pytest.fixture(scope="session")
def snap_runs(work):
    res = {}
    for name in ("snap_bounded", "snap_capped_linear", "snap_capped_parabola"):
        out = work / name
        code, secs, err = run_cli("snap", name, out)
        assert code == 0, err
        res[name] = (json.loads((out / "snap.json").read_text()), secs)
    return res


def test_criterion_6_snap_numerics(snap_runs):
    bounded, t_b = snap_runs["snap_bounded"]
    free, t_f = snap_runs["snap_capped_linear"]
    n_b = bounded["n_metric"][0]["value"]
    n_f = free["n_metric"][0]["value"]
    fil = free["filament_rate"] / free["filament_rate_target"]
    prof = free["profile"]
    prat = prof["rate"] / prof["rate_target"]
    checks = [n_b <= 1e-6, n_f <= 5e-3, free["degenerate"], abs(fil - 1) <= 0.02,
              abs(prat - 1) <= 0.02, prof["correlation"] >= 1 - 1e-6, t_b + t_f <= 1200]
    record(6, all(checks),
           f"bounded N {n_b:.1e}; unbounded N {n_f:.1e}; filament rate x{fil:.4f}; "
           f"profile rate x{prat:.4f}, 1-corr {1 - prof['correlation']:.1e} "
           f"({t_b + t_f:.0f}s)")
    assert all(checks)


def test_capped_parabola_does_not_degenerate(snap_runs):
    par, _ = snap_runs["snap_capped_parabola"]
    assert par["degenerate"] is False
    assert par["snap_integral"]["verdict"] == "divergent"


# -- 7: Monte Carlo against the PDE ---------------------------------------------------------

@pytest.fixture(scope="session")
def mc_run(work):
    out = work / "fig1_mc"
    code, secs, err = run_cli("solve", "fig1_mc", out)
    assert code == 0, err
    code, secs, err = run_cli("mc", "fig1_mc", out)
    assert code == 0, err
    return out, secs


def test_criterion_7_mc_vs_pde(mc_run):
    out, secs = mc_run
    info = json.loads((out / "mc.json").read_text())
    rows = info["probes"]
    phis = [r["phi"] for r in rows]
    parts = [f"phi {r['phi']:.4f} p {r['p_hat']:.4f} |d| {r['abs_error']:.4f} "
             f"tol {r['tolerance']:.4f}" for r in rows]
    ok = (len(rows) == 5 and min(phis) >= 1e-3 and max(phis) <= 0.5
          and all(r["counts"]["hit"] + r["counts"]["marked"] + r["counts"]["timed_out"]
                  + r["counts"]["exited"] == 100_000 for r in rows)
          and all(r["agrees"] for r in rows) and secs <= 600)
    record(7, ok, "; ".join(parts) + f" ({secs:.0f}s)")
    assert ok


def test_mc_dt_refinement(mc_run):
    """Halving the step changes p_hat by less than three combined stderr."""
    out, _ = mc_run
    run = cli.load_config("fig1_mc")
    phi = ScalarField(run.grid, read_binary(out / "phi.bin"))
    pol = classify_control(phi)
    x0, y0 = run.sections["mc"]["probes"][1]
    i, j = run.grid.x.nearest(x0), run.grid.y.nearest(y0)
    res = [estimate_success(pol, run.flow, McConfig(run.grid.x.phys[i], run.grid.y.phys[j],
                                                    n_paths=20_000, delta=0.022, dt=dt,
                                                    seed=5))
           for dt in (1e-3, 5e-4)]
    assert abs(res[1].p_hat - res[0].p_hat) <= 3 * math.hypot(res[0].stderr, res[1].stderr)


# -- 8: gap flow -------------------------------------------------------------------------------

def test_criterion_8_gap_flow(work):
    out = work / "gap"
    code, secs, err = run_cli("boundaries", "gap_flow", out)
    assert code == 0, err
    info = json.loads((out / "regions.json").read_text())
    gaps = info["gaps"]
    ok = (info["gap_check"]["components_right"] >= 2 and info["gap_check"]["contains_interval"]
          and any(g0 < 0.75 and g1 > 0.85 for g0, g1 in gaps) and secs <= 600)
    record(8, ok, f"{info['gap_check']['components_right']} components in x > 0, gaps "
                  + ", ".join(f"({g0:.3f}, {g1:.3f})" for g0, g1 in gaps) + f" ({secs:.0f}s)")
    assert ok


# -- 9: determinism ------------------------------------------------------------------------------

def test_criterion_9_determinism(table_runs, mc_run, work):
    notes, ok = [], True
    # criterion 1: second run of the beta = 1/2 case with two solver threads
    first = table_runs[0.5][3]
    out = work / "scaling_rerun"
    cfg = with_workers("table1_beta05", 2, work / "table1_beta05_w2.ini")
    code, _, err = run_cli("fit-scaling", cfg, out, threads=2)
    assert code == 0, err
    same = files_of(first) == files_of(out)
    notes.append(f"beta=1/2 scaling rerun on 2 threads {'identical' if same else 'DIFFERS'}")
    ok &= same
    # criterion 5: the snap verdicts in a fresh interpreter
    script = ("from shearcouple.flows import FlowSpec; from shearcouple.wkb import snap_integral;"
              "print(repr(snap_integral(FlowSpec.capped_linear())),"
              "repr(snap_integral(FlowSpec.capped_parabola())))")
    outs = {subprocess.run([sys.executable, "-c", script], capture_output=True, text=True,
                           env=dict(os.environ, NUMBA_NUM_THREADS=t), check=True).stdout
            for t in ("1", "2")}
    same = len(outs) == 1
    notes.append(f"snap integral {'identical' if same else 'DIFFERS'}")
    ok &= same
    # criterion 7: Monte Carlo rerun with two path threads on the same solved field
    src, _ = mc_run
    out = work / "fig1_mc_rerun"
    out.mkdir()
    for name in ("phi.bin", "sigma.bin", "solve.json", "convergence.csv"):
        shutil.copy(src / name, out / name)
    cfg = with_workers("fig1_mc", 2, work / "fig1_mc_w2.ini")
    code, _, err = run_cli("mc", cfg, out, threads=2)
    assert code == 0, err
    same = (src / "mc.json").read_bytes() == (out / "mc.json").read_bytes()
    notes.append(f"mc rerun on 2 threads {'identical' if same else 'DIFFERS'}")
    ok &= same
    record(9, ok, "; ".join(notes))
    assert ok
