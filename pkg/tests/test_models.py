import math

import mpmath
import numpy as np
import pytest

from killedsde.errors import InvalidDomainError, ParameterError
from killedsde.models import (DiffusionModel, Domain, bs_log_from_prices, bs_log_model,
                              bs_log_price_model, hlv_log_model, hlv_model, hlv_sigma,
                              remove_drift)
from killedsde.rng import RngSpec
from killedsde.schemes import BridgeKernel, StepGrid
from killedsde.montecarlo import run_mc


def test_domain_validation():
    with pytest.raises(InvalidDomainError):
        Domain(1.0, 1.0)
    with pytest.raises(InvalidDomainError):
        Domain(-math.inf, 0.0)
    d = Domain(0.0).translated(2.0)
    assert (d.lower, d.shift) == (-2.0, 2.0)
    assert d.contains(np.array([-2.0, 0.0])).tolist() == [False, True]


def test_bs_log_model_examples():
    m = bs_log_model(0.2, math.log(0.8))
    assert m.coordinate == "log" and m.driftless
    assert m.sigma(0.3) == 0.2 and np.all(m.sigma(np.linspace(-1, 1, 5)) == 0.2)
    d = bs_log_model(0.2, math.log(0.85), math.log(1.25))
    assert d.domain.bounded
    with pytest.raises(InvalidDomainError):
        bs_log_model(0.2, 0.1, 0.0)
    with pytest.raises(ParameterError):
        bs_log_model(-0.2, 0.0)
    assert bs_log_from_prices(0.2, 0.8).domain.lower == math.log(0.8)


def test_hlv_sigma_identities():
    xs = np.linspace(0.05, 5.0, 200)
    for nu in (0.1, 0.2, 0.35):
        np.testing.assert_allclose(hlv_sigma(nu, 1.0, xs), nu * xs, rtol=1e-14, atol=0)
        for beta in (0.05, 0.2, 0.5, 0.9, 1.0):
            assert abs(hlv_sigma(nu, beta, 1.0) - nu) <= 1e-14 * nu
            assert np.all(hlv_sigma(nu, beta, xs) > 0)


def test_hlv_sigma_high_precision_oracle():
    mpmath.mp.dps = 50
    nu, beta, x = mpmath.mpf("0.3"), mpmath.mpf("0.2"), mpmath.mpf("0.5")
    ref = nu * ((1 - beta + beta ** 2) / beta * x
                + (beta - 1) / beta * (mpmath.sqrt(x ** 2 + beta ** 2 * (1 - x) ** 2) - beta))
    assert abs(hlv_sigma(0.3, 0.2, 0.5) - float(ref)) <= 1e-14 * float(ref)


@pytest.mark.parametrize("nu,beta", [(0.0, 0.5), (0.2, 0.0), (0.2, 1.5), (-1.0, 0.5)])
def test_hlv_sigma_rejects_parameters(nu, beta):
    with pytest.raises(ParameterError):
        hlv_sigma(nu, beta, 1.0)


def test_hlv_model_sigma_bounded_on_domain():
    lo, hi = hlv_model(0.2, 0.5, 0.85, 1.25).check_sigma()
    assert 0 < lo <= hi < 1


def test_remove_drift_black_scholes():
    sigma, T, x0 = 0.2, 1.0, 0.1
    m = bs_log_price_model(sigma, math.log(0.8))
    put = lambda x: np.maximum(1.0 - np.exp(x), 0.0)
    red = remove_drift(m, put, x0, T)
    assert red.driftless.driftless
    assert red.residual_b_const == pytest.approx(-0.125, abs=1e-15)
    np.testing.assert_allclose(red.residual_b(np.linspace(-0.2, 1, 7)), -0.125, atol=1e-12)
    # time part of the closed-form prefactor lives in the weight exp(sigma^2 b T)
    total = red.prefactor(x0) * math.exp(sigma ** 2 * red.residual_b_const * T)
    assert total == pytest.approx(math.exp(x0 / 2 - sigma ** 2 * T / 8), rel=1e-14)
    g = red.payoff_transform(put)
    xs = np.array([-0.2, -0.05, 0.3])
    np.testing.assert_allclose(g(xs), put(xs) * np.exp(-xs / 2), rtol=1e-15)


def test_remove_drift_driftless_is_identity():
    m = bs_log_model(0.2, -1.0)
    red = remove_drift(m, lambda x: x, 0.3, 2.0)
    assert red.prefactor(0.3) == 1.0
    assert red.payoff_transform(lambda x: x * 2)(1.5) == 3.0
    assert red.residual_b(0.4) == 0.0


def test_remove_drift_numeric_paths_on_hlv_log():
    m = hlv_log_model(0.2, 0.5, 0.85, 1.25)
    red = remove_drift(m, lambda y: y, 0.0, 1.0)
    ys = np.linspace(math.log(0.86), math.log(1.24), 9)
    h = 1e-6

    def ratio(y):
        return m.mu(y) / m.sigma(y) ** 2

    fd = (ratio(ys + h) - ratio(ys - h)) / (2 * h)
    oracle = -0.5 * (fd + ratio(ys) ** 2)
    np.testing.assert_allclose(red.residual_b(ys), oracle, atol=1e-8)
    # mu / sigma^2 = -1/2 so F(y) = -y/2 relative to the anchor 0
    assert red.potential(0.1) == pytest.approx(-0.05, abs=1e-12)


def test_remove_drift_nonconstant_ratio():
    # mu = -x, sigma = 1: F = -x^2/2 (+c), b = -(x^2 - 1)/2
    m = DiffusionModel(sigma=lambda x: np.ones_like(np.asarray(x, float)),
                       mu=lambda x: -np.asarray(x, float), domain=Domain(-3.0, 3.0))
    red = remove_drift(m, lambda x: x, 0.5, 1.0)
    xs = np.array([-1.0, 0.0, 0.7, 2.0])
    np.testing.assert_allclose(red.residual_b(xs), -0.5 * (xs ** 2 - 1.0), atol=1e-8)
    assert red.prefactor(0.5) == pytest.approx(1.0, abs=1e-12)
    assert red.potential(1.5) == pytest.approx(-(1.5 ** 2 - 0.25) / 2, abs=1e-10)
    assert red.residual_b_const is None


def test_price_invariance_under_drift_removal():
    """Drifted bridge MC and driftless bridge MC with Girsanov weights agree."""
    sigma, T = 0.2, 1.0
    drifted = bs_log_price_model(sigma, math.log(0.8))
    put = lambda x: np.maximum(1.0 - np.exp(x), 0.0)
    grid = StepGrid(T, 4)
    a = run_mc(BridgeKernel(drifted, grid, drifted.domain, 0.0), put, n_paths=200_000,
               rng=RngSpec(3))
    red = remove_drift(drifted, put, 0.0, T)
    pre = red.prefactor(0.0) * math.exp(sigma ** 2 * red.residual_b_const * T)
    b = run_mc(BridgeKernel(red.driftless, grid, drifted.domain, 0.0), red.payoff_transform(put),
               prefactor=pre, n_paths=200_000, rng=RngSpec(4))
    assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)
