"""Near-field scaling of the entrance boundary, -b(x) ~ x^alpha.

For v(x) = x^beta the exponent is predicted in closed form.  This fits it
from a bounded solve (y axis stretched towards the origin) at a coarser
resolution than the bundled table1 configs, so it finishes in seconds;
expect a few percent of error.

    python demos/02_scaling_law.py [beta]
"""

import sys

from shearcouple.flows import FlowSpec
from shearcouple.grid import build_grid
from shearcouple.hjb import SolverConfig, solve_steady
from shearcouple.regions import extract_boundaries, fit_entrance_exponent, predicted_alpha

beta = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0
grid = build_grid("bounded", 129, "bounded", 129, y_scale=0.3**beta)
cfg = SolverConfig(D=2.0, lam=1.0, scheme="upwind", steady_tol=1e-6, check_every=2000)
res = solve_steady(FlowSpec.power_law(beta), grid, cfg)

comp = extract_boundaries(res.sigma).main_component()
fit = fit_entrance_exponent(comp.x, comp.b, (0.0625, 0.3), grid.x.min_spacing)
alpha = predicted_alpha(beta)
print(f"beta = {beta:g}: fitted alpha = {fit.exponent:.4f} from {fit.points} points, "
      f"predicted {alpha:.4f} ({100 * (fit.exponent / alpha - 1):+.2f}%)")
