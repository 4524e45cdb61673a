import math

import numpy as np
import pytest
from scipy import integrate, special

from shearcouple.flows import FlowSpec, eval_flow
from shearcouple.wkb import (
    InconclusiveError, Nondim, RayError, RayState, RayStop, WkbDomainError,
    action_on_exit_boundary, caustic, degenerate_action, dimensional_boundaries,
    entrance_correction_b1, epsilon, exit_boundary_a0, exit_correction_a1, exit_ray,
    integrate_ray, linear_action, linear_caustic, power_law_a0, power_law_a1,
    power_law_action, resummed_exit, shoot_rays, snap_condition, snap_integral,
    wkb_boundaries,
)

LIN = FlowSpec.linear()
BETAS = [0.5, 1.0, 1.5, 2.0]


# -- scales ---------------------------------------------------------------------

def test_epsilon_values():
    assert epsilon(Nondim(2.0, 1.0, 2.0)) == pytest.approx(0.8408964152537145, rel=1e-14)
    assert epsilon(Nondim(1.0, 1.0, 1.0)) == 1.0
    assert epsilon(Nondim(2.0, 1.0, 1.0)) == pytest.approx(2**0.25, rel=1e-14)


def test_capped_flow_scales():
    nd = Nondim.for_flow(FlowSpec.capped_linear(), 2.0, 1.0)
    assert nd.eps**4 == pytest.approx(2.0)
    assert nd.y_scale == pytest.approx(1 / math.sqrt(8))
    # the deep stations sit roughly 2 and 2.6 length units below the axis
    assert -5.50 * nd.y_scale == pytest.approx(-1.9445, abs=1e-4)
    assert -7.46 * nd.y_scale == pytest.approx(-2.6375, abs=1e-4)


def test_nondim_round_trip():
    nd = Nondim(2.0, 1.0, 2.0, 3.0)
    x, y = nd.to_nondimensional(*nd.to_dimensional(0.3, -1.7))
    assert (x, y) == pytest.approx((0.3, -1.7), rel=1e-14)
    with pytest.raises(ValueError):
        Nondim(0.0, 1.0)


# -- boundary quadratures ----------------------------------------------------------

def test_a0_linear_closed_form():
    assert exit_boundary_a0(LIN, 1.0) == pytest.approx(-4.0 / 3.0, rel=1e-12)


def test_a0_quadratic_closed_form():
    f = FlowSpec.power_law(2.0)
    assert exit_boundary_a0(f, 1.0) == pytest.approx(-special.beta(0.5, 1.5) / 2, rel=1e-12)


@pytest.mark.parametrize("beta", BETAS)
@pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
def test_a0_matches_power_law_forms(beta, x):
    f = FlowSpec.power_law(beta)
    assert exit_boundary_a0(f, x) == pytest.approx(power_law_a0(beta, x), rel=1e-6)
    assert exit_correction_a1(f, x) == pytest.approx(power_law_a1(beta, x), rel=1e-6)
    assert action_on_exit_boundary(f, x) == pytest.approx(power_law_action(beta, x), rel=1e-6)


def test_a0_against_brute_force():
    # plain quadrature with the singular weight handled by scipy's 'alg' rule
    x = 0.8
    f = FlowSpec.capped_parabola()
    vx = float(eval_flow(f, x))

    def smooth(t):
        # v(t) sqrt(v(x)) / sqrt((v(x) - v(t)) / (x - t)); the quotient tends to v'(x)
        q = (vx - float(eval_flow(f, t))) / (x - t) if t < x else 2 - 2 * x
        return float(eval_flow(f, t)) * math.sqrt(vx) / math.sqrt(q)

    ref, _ = integrate.quad(smooth, 0, x, weight="alg", wvar=(0, -0.5), epsabs=1e-13)
    assert exit_boundary_a0(f, x) == pytest.approx(-ref, rel=1e-8)


def test_a0_vanishes_at_origin():
    assert exit_boundary_a0(LIN, 0.0) == 0.0
    assert abs(exit_boundary_a0(LIN, 1e-6)) < 1e-11


def test_a0_rejects_non_monotone():
    with pytest.raises(WkbDomainError):
        exit_boundary_a0(FlowSpec.capped_linear(), 1.5)


def test_a1_linear_and_quadratic():
    assert exit_correction_a1(LIN, 1.0) == pytest.approx(4 / math.sqrt(3), rel=1e-8)
    q = FlowSpec.power_law(2.0)
    expect = math.sqrt(2 * (0.5 + 0.25) * special.beta(0.5, 1.5))
    assert exit_correction_a1(q, 1.0) == pytest.approx(expect, rel=1e-8)
    assert entrance_correction_b1(LIN, 0.7) == -exit_correction_a1(LIN, 0.7)


def test_resummation():
    a0, a1 = -4 / 3, 4 / math.sqrt(3)
    assert resummed_exit(a0, a1, 0.0) == a0
    expect = (-4 / 3) / (1 - 0.5 * (4 / math.sqrt(3)) / (-4 / 3))
    assert resummed_exit(a0, a1, 0.5) == pytest.approx(expect, rel=1e-15)
    errs = [abs(resummed_exit(a0, a1, e) - (a0 + e * a1)) for e in (0.02, 0.01, 0.005)]
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)
    with pytest.raises(WkbDomainError):
        resummed_exit(0.1, 1.0, 0.5)


def test_boundary_table_ordering():
    wb = wkb_boundaries(LIN, np.array([0.25, 0.5, 1.0, 2.0]), 0.8)
    assert np.all(wb.a1 >= 0) and np.array_equal(wb.b1, -wb.a1)
    # the resummed exit boundary sits between a0 and the axis
    assert np.all(wb.a0 <= wb.abar) and np.all(wb.abar < 0)
    # entrance and exit corrections are mirror images about a0
    assert np.allclose(wb.a_first_order - wb.a0, wb.a0 - wb.b_first_order)


def test_boundary_csv(tmp_path):
    wb = wkb_boundaries(LIN, np.array([0.5, 1.0]), 0.8)
    wb.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "x,a0,a1,b1,abar,S0" and len(lines) == 3


def test_dimensional_boundaries_scale():
    d = dimensional_boundaries(LIN, np.array([1.0, 2.0]), 2.0, 1.0, X=2.0)
    nd = Nondim.for_flow(LIN, 2.0, 1.0, 2.0)
    assert d["eps"] == pytest.approx(0.8408964, rel=1e-6)
    assert d["a0"][1] == pytest.approx(power_law_a0(1.0, 1.0) * nd.y_scale, rel=1e-10)


def test_action_at_origin():
    assert action_on_exit_boundary(LIN, 0.0) == 0.0
    assert action_on_exit_boundary(LIN, 1.0) == pytest.approx(4 / 3, rel=1e-10)
    assert action_on_exit_boundary(FlowSpec.power_law(2.0), 1.0) == pytest.approx(
        1.5 * special.beta(0.5, 1.5) / 2, rel=1e-8)


# -- rays -------------------------------------------------------------------------

def test_origin_launch_is_on_shell():
    for px in (1.0, -1.0):
        assert RayState(0.0, 0.0, px, 0.37).hamiltonian(LIN) == 0.5
    with pytest.raises(RayError):
        integrate_ray(LIN, RayState(0.0, 0.0, 0.5, 0.0), RayStop(tau_max=1.0))


@pytest.mark.parametrize("beta", BETAS)
@pytest.mark.parametrize("x0", [0.5, 1.0, 2.0])
def test_exit_rays_land_on_a0(beta, x0):
    f = FlowSpec.power_law(beta)
    path = exit_ray(f, x0)
    assert path.reason == "px_zero"
    assert path.x[-1] == pytest.approx(x0, rel=1e-8)
    assert path.y[-1] == pytest.approx(power_law_a0(beta, x0), rel=1e-6)
    assert path.S[-1] == pytest.approx(action_on_exit_boundary(f, x0), rel=1e-6)
    assert np.max(np.abs(path.hamiltonian(f) - 0.5)) <= 1e-9


def test_px_profile_on_exit_ray():
    path = exit_ray(LIN, 1.5)
    inner = path.x < 1.5 * (1 - 1e-6)
    expect = np.sqrt(1 - eval_flow(LIN, path.x[inner]) / 1.5)
    assert np.max(np.abs(path.px[inner] - expect)) < 1e-9


def test_degenerate_segment_action():
    assert degenerate_action(LIN, 1.0, -1.0, -2.0) == 0.5


def test_ray_crosses_kinks():
    f = FlowSpec.flat_gap()
    path = integrate_ray(f, RayState(0, 0, 1.0, -0.2), RayStop(x_target=1.2, tau_max=20))
    assert path.reason == "x_target" and len(path.kinks_crossed) == 2
    assert np.max(np.abs(path.hamiltonian(f) - 0.5)) <= 1e-9


def test_ray_csv(tmp_path):
    exit_ray(LIN, 1.0).to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "tau,x,y,px,py,S"


# -- linear-flow actions and the caustic -------------------------------------------

def test_linear_actions_agree_on_caustic():
    for x in (0.5, 1.0, 2.0):
        c = float(linear_caustic(x))
        assert linear_action(x, c, "plus") == pytest.approx(linear_action(x, c, "minus"), rel=1e-12)


def test_linear_caustic_value():
    assert caustic(LIN, 2.0) == pytest.approx(-1 / math.sqrt(3), rel=1e-15)


def test_branch_ordering_across_caustic():
    for x in (0.5, 1.0, 2.0):
        c = float(linear_caustic(x))
        fold = -x * x / 6
        for y in np.linspace(fold, c, 6)[:-1]:
            assert linear_action(x, y, "minus") <= linear_action(x, y, "plus")
        for y in np.linspace(c, 0.5 * c, 6)[1:]:
            assert linear_action(x, y, "plus") <= linear_action(x, y, "minus")


def test_branch_domain():
    with pytest.raises(WkbDomainError):
        linear_action(1.0, -1.0, "plus")


def test_closed_form_matches_rays():
    x, y = 1.0, -0.1
    direct = min(s.S for s in shoot_rays(LIN, x, y, 1.0))
    loop = min(s.S for s in shoot_rays(LIN, x, y, -1.0))
    assert direct == pytest.approx(linear_action(x, y, "minus"), rel=1e-6)
    assert loop == pytest.approx(linear_action(x, y, "plus"), rel=1e-6)


def test_looping_ray_above_axis():
    # points just right of the axis with y > 0 are reached only by looping rays
    y = 0.3
    for x in (0.05, 0.1):
        loops = shoot_rays(LIN, x, y, -1.0)
        assert not shoot_rays(LIN, x, y, 1.0)
        assert min(s.S for s in loops) == pytest.approx(linear_action(x, y, "plus"), rel=1e-6)
    assert linear_action(0.0, y, "plus") == pytest.approx(
        min(s.S for s in shoot_rays(LIN, 0.05, y, -1.0)), rel=0.1)


def test_type_b_ray_is_an_action_maximum():
    x = 1.0
    c = float(linear_caustic(x))
    for y in (c - 0.01, c, c + 0.01):
        loops = shoot_rays(LIN, x, y, -1.0)
        direct = shoot_rays(LIN, x, y, 1.0)
        assert len(loops) == 2 and len(direct) == 1
        s_a, s_b = sorted(s.S for s in loops)
        assert s_b >= max(s_a, direct[0].S)


def test_numeric_caustic_linear():
    x = 1.0
    assert caustic(LIN, x, method="shooting") == pytest.approx(float(linear_caustic(x)), rel=1e-4)


def test_closed_caustic_only_for_linear():
    with pytest.raises(ValueError):
        caustic(FlowSpec.power_law(2.0), 1.0, method="closed")


# -- snap criterion ---------------------------------------------------------------

def test_snap_capped_linear():
    res = snap_integral(FlowSpec.capped_linear())
    assert res.verdict == "finite"
    assert res.value == pytest.approx(2.0, rel=1e-8)
    assert snap_condition(FlowSpec.capped_linear())


def test_snap_capped_parabola():
    res = snap_integral(FlowSpec.capped_parabola())
    assert res.verdict == "divergent"
    assert not snap_condition(FlowSpec.capped_parabola())


def test_snap_tabulated_sqrt_like():
    # v(x_m) - v ~ (x_m - x)^1.5: integrand ~ (x_m - x)^-0.75, still finite
    xs = np.linspace(0, 1, 401)
    vs = 1 - (1 - xs) ** 1.5
    res = snap_integral(FlowSpec.tabulated(xs, vs))
    # the interpolant only approximates the 3/2 power near x_m, so just the verdict
    assert res.verdict == "finite"


def test_snap_unbounded_not_applicable():
    with pytest.raises(WkbDomainError):
        snap_integral(LIN)


def test_snap_undecided_is_inconclusive():
    # capped_linear increments shrink by 2^-1/2 per level; bands that exclude
    # that ratio leave the detector undecided
    with pytest.raises(InconclusiveError):
        snap_condition(FlowSpec.capped_linear(), ratio_finite=0.5, ratio_divergent=0.9)
