from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from stickybs.model import ModelError, ModelParams, Payoff
from stickybs.pde import (
    GridError,
    GridSpec,
    interface_residual,
    mollify,
    price_delta_curves,
    price_grid,
    smooth_grid,
    solve_pricing,
    solve_smooth,
)
from stickybs.pricing import bs_call_price

REF = ModelParams(mu=0.0, sigma=0.25, rho=1.0, zeta=10.0, r=0.0)
CALL = Payoff.call(10.0)


@pytest.fixture(scope="module")
def sticky_surface():
    return solve_pricing(REF, CALL, GridSpec.default(10.0), 10.0)


@pytest.fixture(scope="module")
def plain_surface():
    return solve_pricing(REF.with_(rho=0.0), CALL, GridSpec.default(10.0), 10.0)


def test_terminal_level_is_payoff(sticky_surface):
    assert np.array_equal(sticky_surface.values[-1], np.maximum(sticky_surface.x - 10.0, 0.0))


def test_plain_price_matches_closed_form(plain_surface):
    exact = bs_call_price(10.0, 10.0, 10.0, 0.25)
    assert exact == pytest.approx(3.0737, abs=1e-4)
    assert plain_surface.price(0.0, 10.0) == pytest.approx(exact, rel=5e-3)


def test_plain_delta_matches_closed_form(plain_surface):
    d1 = (0.25**2 * 10 / 2) / (0.25 * math.sqrt(10))
    left, right = plain_surface.delta(0.0, 10.0)
    assert left == right
    assert right == pytest.approx(norm.cdf(d1), rel=0.01)
    assert norm.cdf(d1) == pytest.approx(0.654, abs=1e-3)


def test_identity_payoff_is_preserved():
    surf = solve_pricing(REF, Payoff.identity(), GridSpec.default(10.0, 201, 200), 5.0)
    assert np.allclose(surf.values, surf.x[None, :], rtol=1e-10)
    assert surf.delta(1.0, 10.0) == pytest.approx((1.0, 1.0), rel=1e-8)
    assert surf.delta(2.0, 13.0) == pytest.approx((1.0, 1.0), rel=1e-8)


def test_sticky_price_below_plain(sticky_surface, plain_surface):
    assert sticky_surface.price(0.0, 10.0) < plain_surface.price(0.0, 10.0)


def test_interface_condition(sticky_surface):
    # jump = rho sigma^2 zeta^2 v_xx, with v_xx taken one-sided from either side
    jump = sticky_surface.dx_right_at_zeta[0] - sticky_surface.dx_left_at_zeta[0]
    left, right = interface_residual(sticky_surface, REF)
    assert jump > 0
    assert max(left, right) <= 0.02 * jump / (2 * REF.rho)


def test_interface_residual_shrinks_with_refinement():
    res = []
    for n in (201, 401, 801):
        surf = solve_pricing(REF, CALL, GridSpec.default(10.0, n, t_steps=500), 10.0)
        res.append(max(interface_residual(surf, REF)))
    assert res[0] / res[1] >= 1.5
    assert res[1] / res[2] >= 1.5


def test_convex_levels_and_nonnegative_jump(sticky_surface):
    x, v = sticky_surface.x, sticky_surface.values
    slopes = np.diff(v, axis=1) / np.diff(x)
    assert np.all(np.diff(slopes, axis=1) >= -1e-9)
    assert np.all(sticky_surface.dx_right_at_zeta >= sticky_surface.dx_left_at_zeta - 1e-12)


def test_small_rho_limit_monotone_from_below(plain_surface):
    grid = GridSpec.default(10.0)
    prices = [solve_pricing(REF.with_(rho=r), CALL, grid, 10.0).price(0.0, 10.0) for r in (1, 0.1, 0.01, 0.001)]
    target = plain_surface.price(0.0, 10.0)
    assert np.all(np.diff(prices) > 0)
    assert prices[-1] < target
    assert abs(prices[-1] - target) < abs(prices[0] - target)


def test_pricing_checks():
    with pytest.raises(GridError, match="zeta"):
        solve_pricing(REF, CALL, GridSpec(np.geomspace(1.3, 77.0, 300)), 1.0)
    with pytest.raises(ModelError, match="r = 0"):
        solve_pricing(REF.with_(r=0.01), CALL, GridSpec.default(10.0, 101, 10), 1.0)
    with pytest.raises(GridError):
        GridSpec(np.array([1.0, 2.0, 2.0, 3.0, 4.0]))
    with pytest.raises(GridError):
        GridSpec.default(10.0, 101, t_steps=0)
    with pytest.raises(GridError):
        price_grid(10.0, lo=11.0)


def test_out_of_domain_query(sticky_surface):
    with pytest.raises(GridError):
        sticky_surface.delta(0.0, 1000.0)
    with pytest.raises(GridError):
        sticky_surface.price(11.0, 10.0)


def test_curves_carry_the_jump(sticky_surface):
    c = price_delta_curves(sticky_surface)
    j = sticky_surface.zeta_index
    assert c["delta_right"][j] > c["delta_left"][j]
    off = np.arange(c["x"].size) != j
    assert np.array_equal(c["delta_left"][off], c["delta_right"][off])


def test_surface_rows_long_format():
    surf = solve_pricing(REF, CALL, GridSpec.default(10.0, 21, 4), 1.0)
    rows = list(surf.to_rows())
    assert len(rows) == 5 * 21
    assert all(len(r) == 5 for r in rows)


# --------------------------------------------------------------------------- mollification


def test_mollifier_adds_atom_mass():
    for n in (1, 4, 16):
        m = mollify(REF, n)
        lo, hi = m.window()
        mass = quad(m.added_speed, lo, hi, points=[REF.zeta], epsabs=1e-12)[0]
        assert mass == pytest.approx(REF.rho, abs=1e-6)


def test_mollified_volatility_unchanged_outside_window():
    m = mollify(REF, 2)
    lo, hi = m.window()
    x = np.r_[np.linspace(2.0, lo, 50), np.linspace(hi, 40.0, 50)]
    assert np.allclose(m.sigma_n(x), REF.sigma)
    assert m.support_width == pytest.approx(10.0 / 8)


def test_mollified_volatility_well_deepens_like_sqrt_width():
    ratios = []
    for n in (1, 2, 4, 8, 16):
        m = mollify(REF, n)
        ratios.append(float(m.sigma_n(10.0)) / math.sqrt(m.support_width / REF.rho))
    vals = [float(mollify(REF, n).sigma_n(10.0)) for n in (1, 2, 4, 8, 16)]
    assert np.all(np.diff(vals) < 0)
    # ratio settles to the constant sqrt(32 / 35) / zeta as the window shrinks
    assert ratios[-1] == pytest.approx(math.sqrt(32 / 35) / REF.zeta, rel=0.02)
    assert np.all(np.diff(np.abs(np.array(ratios) - math.sqrt(32 / 35) / REF.zeta)) < 0)


def test_mollify_without_stickiness_is_plain():
    m = mollify(REF.with_(rho=0.0), 3)
    assert np.allclose(m.sigma_n(np.linspace(5, 15, 101)), REF.sigma)
    grid = GridSpec.default(10.0, 401, 400)
    p0 = REF.with_(rho=0.0)
    a = solve_smooth(m, CALL, grid, 10.0)
    b = solve_pricing(p0, CALL, grid, 10.0)
    assert np.array_equal(a.values, b.values)


def test_smooth_prices_converge_to_sticky(sticky_surface):
    sticky = sticky_surface.price(0.0, 10.0)
    gaps = []
    for n in (1, 2, 4, 8, 16):
        m = mollify(REF, n)
        surf = solve_smooth(m, CALL, GridSpec(smooth_grid(m), t_steps=2000), 10.0)
        gaps.append(abs(surf.price(0.0, 10.0) - sticky))
    assert gaps[-1] <= 0.02 * sticky
    assert all(b <= 1.1 * a for a, b in zip(gaps[:-1], gaps[1:]))


def test_smooth_surface_has_no_jump():
    m = mollify(REF, 4)
    surf = solve_smooth(m, CALL, GridSpec(smooth_grid(m), t_steps=400), 10.0)
    left, right = surf.delta(0.0, 10.0)
    assert left == right


def test_under_resolved_window_is_rejected():
    m = mollify(REF, 16)
    with pytest.raises(GridError, match="at least 8"):
        solve_smooth(m, CALL, GridSpec.default(10.0), 10.0)


def test_mollify_index_check():
    with pytest.raises(ModelError):
        mollify(REF, 0)
