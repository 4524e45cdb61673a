"""Far-field (small epsilon) asymptotics for the linear shear.

Shows the leading exit boundary a0 and its resummed correction abar in
dimensional units, the action accumulated along the exit boundary, a single
Hamiltonian ray with its energy drift, and the caustic where the two ray
families exchange optimality.  Everything here is quadrature or ODE work and
takes seconds.
"""

import numpy as np

from shearcouple.flows import FlowSpec
from shearcouple.wkb import (
    action_on_exit_boundary, caustic, dimensional_boundaries, exit_boundary_a0, exit_ray,
    linear_caustic, power_law_a0, power_law_action,
)

flow = FlowSpec.linear()
xs = np.array([0.5, 1.0, 2.0, 3.0])

print("x      a0 quad     a0 closed   S0 quad     S0 closed")
for x in xs:
    print(f"{x:<5g}  {exit_boundary_a0(flow, x):+.8f}  {float(power_law_a0(1.0, x)):+.8f}  "
          f"{action_on_exit_boundary(flow, x):.8f}  {float(power_law_action(1.0, x)):.8f}")

dim = dimensional_boundaries(flow, xs, D=2.0, lam=1.0, X=2.0)
print(f"\nepsilon = {dim['eps']:.4f}; dimensional boundaries (D=2, lam=1):")
for x, a0, abar, b in zip(xs, dim["a0"], dim["abar"], dim["b"]):
    print(f"  x={x:<4g} a0={a0:+.4f}  abar={abar:+.4f}  b={b:+.4f}")

ray = exit_ray(flow, 1.0)
H = ray.hamiltonian(flow)
print(f"\nexit ray to x=1: ends at ({ray.x[-1]:.6f}, {ray.y[-1]:.6f}), action {ray.S[-1]:.8f}, "
      f"Hamiltonian drift {np.abs(H - H[0]).max():.1e}")

for x in (0.5, 1.0, 2.0):
    c = caustic(flow, x, method="shooting")
    print(f"caustic at x={x}: shooting {c:+.8f}, closed form {float(linear_caustic(x)):+.8f}")
