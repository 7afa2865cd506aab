import math

import numpy as np
import pytest

from killedsde import schemes
from killedsde.errors import DomainViolationError, ParameterError
from killedsde.htransform import (HMap, big_h, invert_big_h, make_double_barrier_h,
                                  make_parabolic_h, make_single_barrier_h, make_transient_h)
from killedsde.models import Domain, DiffusionModel, bs_log_model, bs_log_price_model, hlv_model
from killedsde.rng import RngSpec
from killedsde.schemes import (BemKernel, BridgeKernel, EulerKernel, StepGrid, bem_path,
                               bem_step, bridge_path, euler_path, no_hit_prob_double,
                               no_hit_prob_single)

from conftest import L_DOUBLE, L_SINGLE, R_DOUBLE, SIGMA

ZERO = lambda x: 0.0


def test_step_grid():
    with pytest.raises(ParameterError):
        StepGrid(1.0, 0)
    with pytest.raises(ParameterError):
        StepGrid(0.0, 4)
    g = StepGrid(1.0, 64)
    assert g.dt * g.N == g.T and g.time(64) == 1.0
    assert g.times[0] == 0.0 and g.times[-1] == 1.0 and len(g.times) == 65


def test_bem_step_fixed_point():
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    dt, x = 1 / 16, 0.05
    target = big_h(HMap(tr, dt * SIGMA ** 2), x)
    dW = (target - x) / SIGMA
    assert bem_step(tr, SIGMA, x, dW, dt) == pytest.approx(x, abs=1e-12)


def test_bem_step_transient_closed_form():
    l, dt = L_SINGLE, 1 / 8
    tr = make_transient_h(l)
    for x, dW in [(0.0, 0.3), (-0.2, -0.7), (0.5, 0.01)]:
        xi = x + SIGMA * dW
        closed = 0.5 * (math.sqrt(4 * SIGMA ** 2 * dt + (xi - l) ** 2) + xi + l)
        assert bem_step(tr, SIGMA, x, dW, dt) == pytest.approx(closed, abs=1e-12)
        from killedsde.htransform import _bisect_scalar
        assert _bisect_scalar(HMap(tr, SIGMA ** 2 * dt), xi) == pytest.approx(closed, abs=1e-12)


@pytest.mark.parametrize("tr", [make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE),
                                make_single_barrier_h(L_SINGLE), make_transient_h(L_SINGLE)])
def test_bem_step_extreme_increments(tr):
    dt = 1 / 32
    for sign in (-1, 1):
        x = bem_step(tr, SIGMA, 0.0, sign * 10 * math.sqrt(dt), dt)
        assert tr.domain.contains(x)
    with pytest.raises(DomainViolationError):
        bem_step(tr, SIGMA, tr.domain.lower, 0.1, dt)


def test_bem_path_transient_weight_exactly_one():
    m = bs_log_model(SIGMA, L_SINGLE)
    tr = make_transient_h(L_SINGLE)
    out = bem_path(m, tr, ZERO, StepGrid(1.0, 16), np.random.default_rng(1).normal(size=16), 0.0)
    assert out.weight == 1.0 and not out.killed


def test_bem_path_one_step_weight():
    m = bs_log_model(SIGMA, L_SINGLE)
    tr = make_single_barrier_h(L_SINGLE)
    out = bem_path(m, tr, ZERO, StepGrid(1.0, 1), [0.4], 0.0)
    h2h = -math.exp(-0.0) / (math.exp(-L_SINGLE) - math.exp(-0.0))
    assert out.weight == pytest.approx(math.exp(0.5 * SIGMA ** 2 * h2h), rel=1e-14)


def test_bem_path_zero_normals_composition():
    m = bs_log_model(SIGMA, L_DOUBLE, R_DOUBLE)
    tr = make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE)
    N, x0 = 8, 0.1
    hm = HMap(tr, SIGMA ** 2 / N)
    x = x0
    for _ in range(N):
        x = invert_big_h(hm, x)
    assert bem_path(m, tr, ZERO, StepGrid(1.0, N), np.zeros(N), x0).terminal == pytest.approx(x, abs=1e-12)


def test_euler_path_examples():
    bs = bs_log_price_model(SIGMA, L_SINGLE)
    grid = StepGrid(1.0, 4)
    killed = euler_path(bs, grid, [-5.0, 0, 0, 0], bs.domain, 0.0)
    assert killed.killed and killed.weight == 0.0
    frozen = DiffusionModel(sigma=lambda x: 0.0, mu=lambda x: 0.0, domain=Domain(-1.0, 1.0))
    out = euler_path(frozen, grid, [1.0, -2.0, 3.0, 0.5], frozen.domain, 0.3)
    assert out.terminal == 0.3 and not out.killed and out.weight == 1.0
    z = [0.3, -0.1, 0.2, 0.05]
    x = 0.0
    for zi in z:
        x = x - 0.5 * SIGMA ** 2 * 0.25 + SIGMA * 0.5 * zi
    assert euler_path(bs, grid, z, bs.domain, 0.0).terminal == pytest.approx(x, abs=1e-15)


def test_no_hit_single_examples():
    dt, l = 0.25, 0.0
    assert no_hit_prob_single(l, 0.3, l, SIGMA, dt) == 0.0
    x = l + SIGMA * math.sqrt(dt)
    assert no_hit_prob_single(x, x, l, SIGMA, dt) == pytest.approx(1 - math.exp(-2), rel=1e-15)
    assert 1 - math.exp(-2) == pytest.approx(0.8646647167633873, rel=1e-15)
    assert no_hit_prob_single(1e3, 1e3, l, SIGMA, dt) == 1.0


def test_no_hit_double_examples():
    dt, l, r = 1 / 16, L_DOUBLE, R_DOUBLE
    assert no_hit_prob_double(l - 0.01, 0.0, l, r, SIGMA, dt) == 0.0
    s = SIGMA * math.sqrt(dt)
    far = l + 50 * s
    for a, b in [(l + 0.3 * s, l + 1.1 * s), (l + 2 * s, l + 0.5 * s), (l + s, l + s)]:
        assert no_hit_prob_double(a, b, l, far, SIGMA, dt) == pytest.approx(
            no_hit_prob_single(a, b, l, SIGMA, dt), abs=1e-10)
    rng = np.random.default_rng(5)
    for a, b in rng.uniform(l, r, (200, 2)):
        v5 = no_hit_prob_double(a, b, l, r, SIGMA, 1.0, 5)
        v10 = no_hit_prob_double(a, b, l, r, SIGMA, 1.0, 10)
        assert abs(v5 - v10) < 1e-12 and 0.0 <= v5 <= 1.0


def test_bridge_path_examples():
    bs = bs_log_price_model(SIGMA, L_SINGLE)
    grid = StepGrid(1.0, 2)
    assert bridge_path(bs, grid, [0.0, 0.0], bs.domain, L_SINGLE).weight == 0.0
    wide = Domain(-1e6)
    assert bridge_path(bs, grid, [0.5, -1.0], wide, 0.0).weight == 1.0
    out = bridge_path(bs, grid, [0.5, -1.0], bs.domain, 0.0)
    assert 0.0 < out.weight < 1.0 and not out.killed


def test_bridge_one_step_matches_analytic():
    from killedsde.analytic import BarrierSpec, DOWN_OUT_PUT, down_out_put_price
    from killedsde.montecarlo import run_mc
    bs = bs_log_price_model(SIGMA, L_SINGLE)
    put = lambda x: np.maximum(1.0 - np.exp(x), 0.0)
    res = run_mc(BridgeKernel(bs, StepGrid(1.0, 1), bs.domain, 0.0), put, n_paths=1_000_000,
                 rng=RngSpec(11))
    ref = down_out_put_price(BarrierSpec(DOWN_OUT_PUT, 1.0, 0.8))
    assert abs(res.mean - ref) < 3 * res.stderr


# ------------------------------------------------------------- batch kernels

def _kernel_cases():
    bs1 = bs_log_model(SIGMA, L_SINGLE)
    bs2 = bs_log_model(SIGMA, L_DOUBLE, R_DOUBLE)
    hl = hlv_model(0.2, 0.5, 0.85, 1.25)
    return {
        "exp": (bs1, make_single_barrier_h(L_SINGLE), 0.0, -0.125),
        "linear": (bs1, make_transient_h(L_SINGLE), 0.0, 0.0),
        "quartic": (bs2, make_double_barrier_h(SIGMA, L_DOUBLE, R_DOUBLE), 0.0, -0.125),
        "hlv": (hl, make_parabolic_h(0.85, 1.25), 1.0, 0.0),
    }


@pytest.mark.parametrize("case", ["exp", "linear", "quartic", "hlv"])
def test_batch_kernel_matches_scalar_reference(case):
    model, tr, x0, b = _kernel_cases()[case]
    grid = StepGrid(1.0, 8)
    normals = np.random.default_rng(7).normal(size=(40, 8))
    batch = BemKernel(model, tr, grid, x0, b)(0, 0, 40, normals=normals)
    for i in range(40):
        ref = bem_path(model, tr, lambda x: b, grid, normals[i], x0)
        assert batch.terminal[i] == pytest.approx(ref.terminal, abs=1e-10)
        # states agree to solver tolerance, which the weight inherits
        assert batch.weight[i] == pytest.approx(ref.weight, rel=1e-9)


@pytest.mark.skipif(schemes._compiled is None, reason="extension not built")
@pytest.mark.parametrize("case", ["exp", "linear", "quartic", "hlv"])
def test_compiled_and_python_backends_agree(case):
    model, tr, x0, b = _kernel_cases()[case]
    grid = StepGrid(1.0, 16)
    key = RngSpec(9).key
    c = BemKernel(model, tr, grid, x0, b, backend="compiled")
    p = BemKernel(model, tr, grid, x0, b, backend="python")
    assert c.compiled and not p.compiled
    bc, bp = c(key, 100, 500), p(key, 100, 500)
    np.testing.assert_allclose(bc.terminal, bp.terminal, atol=1e-10, rtol=0)
    np.testing.assert_allclose(bc.weight, bp.weight, rtol=1e-12)
    dom = model.domain
    drifted = bs_log_price_model(SIGMA, dom.lower, dom.upper) if case != "hlv" else model
    for K in (EulerKernel, BridgeKernel):
        kc = K(drifted, grid, dom, x0, backend="compiled")(key, 0, 500)
        kp = K(drifted, grid, dom, x0, backend="python")(key, 0, 500)
        np.testing.assert_allclose(kc.terminal, kp.terminal, atol=1e-13, rtol=0)
        np.testing.assert_allclose(kc.weight, kp.weight, atol=1e-12, rtol=0)


@pytest.mark.skipif(schemes._compiled is None, reason="extension not built")
def test_compiled_uniforms_match_numpy():
    from killedsde import _kernels
    from killedsde.rng import uniforms
    key = RngSpec(123).key
    a = np.asarray(_kernels.uniforms(key, 10, 50, 7))
    assert np.array_equal(a, uniforms(key, 10, 50, 7))
    z = np.asarray(_kernels.normals(key, 10, 50, 7))
    np.testing.assert_allclose(z, RngSpec(123).normals(10, 50, 7), atol=5e-15, rtol=0)


@pytest.mark.parametrize("solver", ["bisection", "grid"])
def test_alternative_solvers(solver):
    model, tr, x0, b = _kernel_cases()["quartic"]
    grid = StepGrid(1.0, 16)
    key = RngSpec(2).key
    ref = BemKernel(model, tr, grid, x0, b)(key, 0, 300)
    alt = BemKernel(model, tr, grid, x0, b, solver=solver, grid_points=200001)(key, 0, 300)
    tol = 1e-10 if solver == "bisection" else 1e-4
    np.testing.assert_allclose(alt.terminal, ref.terminal, atol=tol, rtol=0)


def test_grid_solver_rejects_nonconstant_sigma():
    model, tr, x0, b = _kernel_cases()["hlv"]
    with pytest.raises(ParameterError):
        BemKernel(model, tr, StepGrid(1.0, 4), x0, b, solver="grid")


def test_bem_weight_in_unit_interval_and_interior():
    model, tr, x0, b = _kernel_cases()["exp"]
    out = BemKernel(model, tr, StepGrid(1.0, 32), x0, b)(RngSpec(4).key, 0, 20_000)
    assert np.all((out.weight > 0) & (out.weight <= 1))
    assert np.all(out.terminal > L_SINGLE)


def test_kernel_normals_are_seed_deterministic():
    model, tr, x0, b = _kernel_cases()["quartic"]
    k = BemKernel(model, tr, StepGrid(1.0, 8), x0, b)
    a, c = k(RngSpec(5).key, 0, 1000), k(RngSpec(5).key, 0, 1000)
    assert np.array_equal(a.terminal, c.terminal) and np.array_equal(a.weight, c.weight)
    # a sub-block reproduces the same paths
    s = k(RngSpec(5).key, 300, 100)
    assert np.array_equal(s.terminal, a.terminal[300:400])


def test_bridge_clamp_count_reported():
    bs = bs_log_price_model(SIGMA, L_DOUBLE, R_DOUBLE)
    out = BridgeKernel(bs, StepGrid(1.0, 4), bs.domain, 0.0, n_terms=1)(RngSpec(1).key, 0, 5000)
    assert "clamped" in out.diagnostics and out.diagnostics["clamped"] >= 0
    assert np.all((out.weight >= 0) & (out.weight <= 1))
    with pytest.raises(ParameterError):
        BridgeKernel(bs, StepGrid(1.0, 4), bs.domain, 0.0, n_terms=0)
