"""Success probability and no-diffusion region for the linear shear v(x) = x.

Solves the steady obstacle problem on a modest tanh-stretched grid, reads
phi at a few points, extracts the boundaries of the region where the
optimal control switches diffusion off, and writes two SVG figures.

    python demos/01_linear_flow.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from shearcouple.flows import FlowSpec
from shearcouple.grid import build_grid
from shearcouple.hjb import SolverConfig, solve_steady
from shearcouple.plotting import contour_plot, region_plot
from shearcouple.regions import extract_boundaries

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

flow = FlowSpec.linear()
grid = build_grid("unbounded", 129, "unbounded", 129)
res = solve_steady(flow, grid, SolverConfig(D=2.0, lam=1.0, steady_tol=1e-6))
print(f"converged in {res.steps} steps, dt = {res.dt:.3g}")

for x, y in [(0.2, -0.1), (1.0, -0.6), (2.3, -1.4), (-1.0, 0.6)]:
    print(f"phi({x:+.1f}, {y:+.1f}) = {res.phi.interpolate(x, y):.4f}")

region = extract_boundaries(res.sigma)
main = region.main_component()
print(f"{len(region.components)} no-diffusion component(s); main spans x in "
      f"[{main.x_extent[0]:.2f}, {main.x_extent[1]:.2f}]")

xs, ys = grid.x.phys, grid.y.phys
contour_plot(xs, ys, res.phi.values, out / "linear_contours.svg", "phi, linear shear")
bounds = {"x": main.x, "a": main.a, "b": main.b, "component": [main.label] * len(main.x)}
region_plot({k: np.asarray(v) for k, v in bounds.items()},
            out / "linear_region.svg", "no-diffusion region, linear shear")
print(f"figures in {out}/")
