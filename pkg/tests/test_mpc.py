import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcmatch import reactor
from mcmatch.matching import build_augmented, match
from mcmatch.mpc import CondensedOcp, MatchedMPC, MpcState, OcpSpec, condense, mpc_step
from mcmatch.numerics import kkt_residuals, solve_qp
from mcmatch.pi import PIController
from mcmatch.sde import SimConfig, cstr3_system, simulate_lanes
from oracles import enumerate_qp


@pytest.fixture(scope="module")
def aug(plant, gains):
    return build_augmented(plant, gains)


@pytest.fixture(scope="module")
def cost(aug):
    return match(aug, q_eps_l=10.0, l_eps_l=3.0, q_eps_u=20.0, l_eps_u=1.0)


def _spec(aug, cost, horizon=4, **kw):
    a, b = aug.model()
    return OcpSpec(a, b, aug.cz, cost, horizon, **kw)


def test_spec_validation(aug, cost):
    with pytest.raises(ValueError):
        _spec(aug, cost, horizon=0)
    with pytest.raises(ValueError):
        _spec(aug, cost, u_min=1.0, u_max=0.0)
    s = _spec(aug, cost, horizon=3, z_min=-1.0)
    assert (s.n_lo, s.n_hi, s.n_vars) == (4, 0, 7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_condensed_objective_equals_simulated_cost(aug, cost, seed):
    rng = np.random.default_rng(seed)
    spec = _spec(aug, cost, horizon=5, z_min=-0.5, z_max=0.5)
    ocp = CondensedOcp(spec)
    x0 = rng.normal(size=2) * [0.05, 1e-3]
    v = np.concatenate([rng.normal(size=5) * 1e-3, rng.uniform(0, 1, size=12)])
    qp = ocp.qp(x0)
    u, el, eu = ocp.split(v)
    assert qp.objective(v) == pytest.approx(ocp.direct_objective(x0, u, el, eu), rel=1e-10)


def test_predicted_outputs(aug, cost, rng):
    ocp = CondensedOcp(_spec(aug, cost, horizon=6))
    x0, u = rng.normal(size=2), rng.normal(size=6)
    x, zs = x0.copy(), []
    for k in range(7):
        zs.append((aug.cz @ x)[0])
        if k < 6:
            x = aug.a_tilde @ x + aug.b_tilde[:, 0] * u[k]
    np.testing.assert_allclose(ocp.zx @ x0 + ocp.zu @ u, zs, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("horizon", [1, 5, 50])
def test_unconstrained_first_move_is_pi_law(aug, cost, horizon):
    ocp = CondensedOcp(_spec(aug, cost, horizon=horizon))
    np.testing.assert_allclose(ocp.k_unc[0], -aug.k_hat[0], rtol=1e-8)
    # the whole sequence follows the closed loop
    x = np.array([0.01, 0.002])
    u = ocp.k_unc @ x
    for k in range(horizon):
        assert u[k] == pytest.approx(-(aug.k_hat @ x)[0], rel=1e-7, abs=1e-14)
        x = aug.closed_loop() @ x


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_constrained_qp_matches_enumeration(aug, cost, seed):
    rng = np.random.default_rng(seed)
    spec = _spec(aug, cost, horizon=2, u_min=-0.002, u_max=0.002, z_min=-0.3)
    x0 = np.array([rng.normal() * 0.08, rng.normal() * 0.005])
    qp = condense(spec, x0)
    # write every bound as a one-sided row  a v <= b
    n = qp.n
    rows = [-qp.a, -np.eye(n)[:2], np.eye(n)[:2], -np.eye(n)[2:]]
    rhs = [-qp.lo, -qp.lb[:2], qp.ub[:2], np.zeros(n - 2)]
    x_ref, val = enumerate_qp(qp.h, qp.g, np.vstack(rows), np.concatenate(rhs))
    res = solve_qp(qp)
    np.testing.assert_allclose(res.x, x_ref, atol=1e-8 * max(1.0, np.abs(x_ref).max()))
    assert max(kkt_residuals(qp, res.x, res.lam_rows, res.lam_bounds).values()) < 1e-6


def test_warm_start_is_feasible(aug, cost):
    spec = _spec(aug, cost, horizon=8, u_min=-0.001, u_max=0.001, z_min=-0.2, z_max=0.2)
    ocp = CondensedOcp(spec)
    x0 = np.array([-0.08, 0.0])
    v0, work = ocp.warm_start(x0)
    qp = ocp.qp(x0)
    assert np.all(qp.a @ v0 >= qp.lo - 1e-12) and np.all(qp.a @ v0 <= qp.hi + 1e-12)
    assert np.all(v0 >= qp.lb) and np.all(v0 <= qp.ub)
    assert len(work) >= 1


def _mpc(plant, gains, aug_cost, **kw):
    return MatchedMPC(plant, gains, aug_cost, horizon=20, **kw)


def test_mpc_step_equals_vectorized_controller(plant, gains, aug):
    cost = match(aug)
    z_min = gains.y_bar - 0.3
    ctrl = _mpc(plant, gains, cost, z_min=z_min).reset(3)
    core = ctrl.core_
    ys = np.array([gains.y_bar, gains.y_bar - 0.8, gains.y_bar + 0.4])
    states = [MpcState() for _ in ys]
    for _ in range(4):
        u_vec = ctrl.step(ys)
        for j in range(3):
            u, states[j], diag = mpc_step(states[j], ys[j], core)
            assert u == pytest.approx(u_vec[j], rel=1e-12)
            assert states[j].integrator == pytest.approx(ctrl.integrator[j], rel=1e-12, abs=1e-15)
            assert diag.slack_lo == pytest.approx(ctrl.slack_lo[j], abs=1e-12)
        ys = ys + np.array([0.01, -0.05, 0.02])
    assert ctrl.n_qp_ > 0


def test_soft_bound_produces_slack_and_more_flow_correction(plant, gains, aug):
    cost = match(aug)
    ctrl = _mpc(plant, gains, cost, z_min=gains.y_bar - 0.1).reset(1)
    y = np.array([gains.y_bar - 1.0])
    u_mpc = ctrl.step(y)[0]
    u_pi = PIController.from_gains(gains).reset(1).step(y)[0]
    assert ctrl.slack_lo[0] > 0
    # cooling feed must be reduced harder than PI does to lift the temperature
    assert u_mpc < u_pi


def test_matches_pi_without_noise(params, plant, gains, aug):
    quiet = cstr3_system(params.replace(sigma_t=0.0, rv=0.0))
    cfg = SimConfig(tf=60.0, x0=reactor.manifold_state(gains.y_bar + 0.5, params))
    cost = match(aug)
    pi = simulate_lanes(quiet, PIController.from_gains(gains), cfg, [0])[0]
    mpc = simulate_lanes(quiet, _mpc(plant, gains, cost), cfg, [0])[0]
    np.testing.assert_allclose(mpc.u, pi.u, atol=1e-12)
    np.testing.assert_allclose(mpc.z, pi.z, atol=1e-9)
    np.testing.assert_allclose(mpc.integrator, pi.integrator, atol=1e-12)
