import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from killedsde.errors import DomainViolationError, InvalidDomainError
from killedsde.htransform import (HMap, big_h, build_inverse_grid, invert_big_h,
                                  make_double_barrier_h, make_h, make_parabolic_h,
                                  make_single_barrier_h, make_transient_h, quartic_a,
                                  quartic_b, quartic_expanded)
from killedsde.models import Domain

from conftest import L_DOUBLE, L_SINGLE, R_DOUBLE, SIGMA, all_transforms, interior_points


def test_quartic_boundary_zeros_positive_concave():
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    assert abs(tr.h(L_DOUBLE)) < 1e-10 and abs(tr.h(R_DOUBLE)) < 1e-10
    xs = np.linspace(L_DOUBLE, R_DOUBLE, 403)[1:-1]
    assert np.all(tr.h(xs) > 0) and np.all(tr.h2(xs) <= 0)


def test_quartic_generator_identity():
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    xs = np.linspace(L_DOUBLE, R_DOUBLE, 203)[1:-1]
    f = (xs - L_DOUBLE) * (R_DOUBLE - xs)
    np.testing.assert_allclose(0.5 * SIGMA ** 2 * tr.h2(xs), -f, rtol=1e-10)
    m = 0.5 * (L_DOUBLE + R_DOUBLE)
    assert 0.5 * SIGMA ** 2 * tr.h2(m) + (m - L_DOUBLE) * (R_DOUBLE - m) == pytest.approx(0, abs=1e-15)


def test_quartic_coefficients_against_quadrature():
    """Integrate -2f/sigma^2 twice numerically with h(l) = h(r) = 0."""
    l, r, s = L_DOUBLE, R_DOUBLE, SIGMA
    f = lambda x: (x - l) * (r - x)
    g1 = lambda x: integrate.quad(lambda y: -2 * f(y) / s ** 2, l, x, epsabs=1e-14)[0]
    g2 = lambda x: integrate.quad(g1, l, x, epsabs=1e-14)[0]
    slope = -g2(r) / (r - l)  # h'(l) fixing h(r) = 0
    tr = make_double_barrier_h(s, l, r)
    for x in np.linspace(l, r, 9)[1:-1]:
        assert tr.h(x) == pytest.approx(slope * (x - l) + g2(x), abs=1e-8)
    assert tr.h1(l) == pytest.approx(slope, abs=1e-8)
    xs = np.linspace(l, r, 31)
    np.testing.assert_allclose(quartic_expanded(s, l, r, xs), tr.h(xs), atol=1e-8)
    assert tr.params["a"] == quartic_a(l, r) and tr.params["b"] == quartic_b(s, l, r)


@pytest.mark.parametrize("name", ["quartic", "parabolic", "exp", "linear"])
def test_derivatives_match_finite_differences(name, rng):
    tr = all_transforms()[name]
    xs = interior_points(tr, 50, rng)
    l, r = tr.domain.lower, tr.domain.upper
    width = (r - l) if math.isfinite(r) else 3.0
    xs = xs[(xs - l > 0.05 * width) & ((r - xs) > 0.05 * width)]
    e = 1e-5 * width
    fd1 = (tr.h(xs + e) - tr.h(xs - e)) / (2 * e)
    fd2 = (tr.h1(xs + e) - tr.h1(xs - e)) / (2 * e)
    np.testing.assert_allclose(tr.h1(xs), fd1, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(tr.h2(xs), fd2, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(tr.ratio(xs), tr.h1(xs) / tr.h(xs), rtol=1e-12)
    np.testing.assert_allclose(tr.curvature(xs), tr.h2(xs) / tr.h(xs), rtol=1e-12, atol=1e-15)


def test_single_barrier_examples():
    tr = make_single_barrier_h(L_SINGLE)
    assert tr.h(L_SINGLE) == 0.0
    xs = np.linspace(L_SINGLE + 1e-3, 5, 100)
    assert np.all(tr.h1(xs) > 0) and np.all(tr.h2(xs) < 0)
    mpmath.mp.dps = 40
    l = mpmath.log(mpmath.mpf("0.8"))
    ref = mpmath.exp(-l) * (1 - mpmath.exp(-1))
    assert tr.h(L_SINGLE + 1.0) == pytest.approx(float(ref), rel=1e-15)
    with pytest.raises(InvalidDomainError):
        make_single_barrier_h(math.inf)


def test_transient_examples():
    tr = make_transient_h(0.0)
    assert tr.h(0.0) == 0.0
    assert np.all(tr.h1(np.linspace(0.1, 9, 11)) == 1.0)
    assert np.all(tr.curvature(np.linspace(0.1, 9, 11)) == 0.0)


def test_parabolic_and_make_h():
    tr = make_parabolic_h(0.85, 1.25)
    assert tr.h(0.85) == 0.0 and tr.h(1.25) == 0.0
    assert tr.h2(1.0) == -2.0
    with pytest.raises(InvalidDomainError):
        make_h("exp", Domain(0.0, 1.0))
    with pytest.raises(InvalidDomainError):
        make_h("quartic", Domain(0.0))
    with pytest.raises(InvalidDomainError):
        make_double_barrier_h(0.2, 1.0, 0.5)


def test_big_h_examples():
    tr = make_transient_h(0.0)
    assert big_h(HMap(tr, 0.0), 0.37) == 0.37
    assert big_h(HMap(tr, 0.04), 1.0) == pytest.approx(0.96, abs=1e-15)
    with pytest.raises(DomainViolationError):
        big_h(HMap(tr, 0.04), 0.0)
    with pytest.raises(DomainViolationError):
        big_h(HMap(tr, 0.04), -1.0)


@pytest.mark.parametrize("name", ["quartic", "parabolic", "exp", "linear"])
def test_big_h_monotone_with_slope_at_least_one(name, rng):
    tr = all_transforms()[name]
    hm = HMap(tr, 0.01 * 0.04)
    xs = np.sort(interior_points(tr, 2000, rng))
    hs = big_h(hm, xs)
    assert np.all(np.diff(hs) > 0)
    assert np.all(hm.derivative(xs) >= 1.0)


def test_quartic_boundary_blowup():
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    w = R_DOUBLE - L_DOUBLE
    hm = HMap(tr, 0.04 * w ** 2)
    assert big_h(hm, L_DOUBLE + 1e-8 * w) < -1e5
    assert big_h(hm, R_DOUBLE - 1e-8 * w) > 1e5


@pytest.mark.parametrize("name", ["quartic", "parabolic", "exp", "linear"])
@pytest.mark.parametrize("method", ["bisection", "newton"])
def test_inverse_roundtrip(name, method, rng):
    tr = all_transforms()[name]
    hm = HMap(tr, (1 / 64) * SIGMA ** 2)
    xs = interior_points(tr, 1000, rng)
    back = invert_big_h(hm, big_h(hm, xs), method=method)
    np.testing.assert_allclose(back, xs, rtol=0, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(u=st.floats(1e-6, 1 - 1e-6), z=st.floats(1e-6, 0.05))
def test_inverse_roundtrip_property(u, z):
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    x = L_DOUBLE + u * (R_DOUBLE - L_DOUBLE)
    hm = HMap(tr, z)
    assert abs(invert_big_h(hm, big_h(hm, x), method="newton") - x) < 1e-10


def test_inverse_examples():
    tr = make_transient_h(0.0)
    assert invert_big_h(HMap(tr, 0.04), 0.96) == pytest.approx(1.0, abs=1e-15)
    assert 0.5 * (math.sqrt(0.16 + 0.9216) + 0.96) == pytest.approx(1.0, abs=1e-15)
    q = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    assert invert_big_h(HMap(q, 0.0), 0.05) == 0.05


def test_linear_closed_form_matches_bisection(rng):
    tr = make_transient_h(L_SINGLE)
    hm = HMap(tr, 0.04 / 16)
    ys = rng.normal(0.0, 2.0, 500)
    closed = invert_big_h(hm, ys)
    from killedsde.htransform import _bisect_scalar
    bis = np.array([_bisect_scalar(hm, float(y)) for y in ys])
    np.testing.assert_allclose(closed, bis, atol=1e-12, rtol=0)


@pytest.mark.parametrize("name", ["quartic", "exp"])
def test_inverse_increasing_and_extreme(name, rng):
    tr = all_transforms()[name]
    hm = HMap(tr, 0.04 / 4)
    ys = np.sort(rng.normal(0.0, 1.0, 300))
    xs = invert_big_h(hm, ys, method="newton")
    assert np.all(np.diff(xs) > 0)
    for y in (-1e6, 1e6):
        x = invert_big_h(hm, y)
        assert tr.domain.contains(x)


def test_newton_agrees_with_bisection(rng):
    for tr in all_transforms().values():
        hm = HMap(tr, 0.04 / 8)
        ys = rng.normal(0.0, 0.3, 200)
        a = invert_big_h(hm, ys, method="newton")
        b = invert_big_h(hm, ys, method="bisection")
        np.testing.assert_allclose(a, b, atol=2e-12, rtol=0)


def test_inverse_grid(rng):
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    z = SIGMA ** 2 / 32
    grid = build_inverse_grid(tr, z, 2001)
    assert np.array_equal(grid(grid.hx[::97]), grid.x[::97])
    ys = rng.uniform(grid.hx[0] - 0.5, grid.hx[-1] + 0.5, 10_000)
    exact = invert_big_h(HMap(tr, z), ys, method="newton")
    assert np.max(np.abs(grid(ys) - exact)) <= 2 * grid.spacing
    two = build_inverse_grid(tr, z, 2)
    assert two.hx[0] < two.hx[1]
    q = np.linspace(two.hx[0], two.hx[1], 17)
    assert np.all(np.diff(two(q)) > 0)
    with pytest.raises(InvalidDomainError):
        build_inverse_grid(make_single_barrier_h(0.0), z, 10)
