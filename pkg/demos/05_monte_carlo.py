"""Pathwise check of phi by simulating the controlled process.

Solves a linear-shear field, then runs the bang-bang policy it implies from
two start points and compares the hit frequency with phi.  Hitting a point
is replaced by entering a ball of radius delta, which biases p_hat upwards;
the delta sweep printed below shows how large that bias is.  The grid also
limits how small delta can be (at least half a cell at the origin).
"""

from shearcouple.flows import FlowSpec
from shearcouple.grid import build_grid
from shearcouple.hjb import SolverConfig, solve_steady
from shearcouple.montecarlo import McConfig, estimate_success

flow = FlowSpec.linear()
grid = build_grid("unbounded", 129, "unbounded", 129)
res = solve_steady(flow, grid, SolverConfig(steady_tol=1e-6))
print(f"grid spacing at the origin {grid.x.min_spacing:.4f}")

for x0, y0 in [(0.5, -0.3), (1.5, -1.0)]:
    cfg = McConfig(x0=x0, y0=y0, n_paths=10_000, seed=11, delta=0.05)
    mc = estimate_success(res.sigma, flow, cfg)
    phi = res.phi.interpolate(x0, y0)
    sweep = ", ".join(f"{k}: {v['p_hat']:.4f}" for k, v in sorted(mc.sweep.items()))
    print(f"start ({x0}, {y0}): phi = {phi:.4f}, p_hat = {mc.p_hat:.4f} +- {mc.stderr:.4f}")
    print(f"    by ball radius  {sweep}")
    print(f"    counts {mc.counts}")
