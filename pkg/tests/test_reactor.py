import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcmatch import reactor
from mcmatch.exceptions import DivergenceError, DomainError
from mcmatch.reactor import ReactorParameters


def test_unit_conversions_round_trip():
    assert reactor.ml_min_to_l_s(600.0) == pytest.approx(0.01)
    assert reactor.l_s_to_ml_min(reactor.ml_min_to_l_s(630.0)) == pytest.approx(630.0)
    assert reactor.celsius_to_kelvin(0.0) == pytest.approx(273.15)
    assert reactor.kelvin_to_celsius(reactor.celsius_to_kelvin(59.3)) == pytest.approx(59.3)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ReactorParameters(volume=-1.0)
    with pytest.raises(ValueError):
        ReactorParameters(f_min=10.0, f_max=5.0)


def test_parameter_file_round_trip(tmp_path, params):
    params.save(tmp_path / "p.yaml")
    assert ReactorParameters.load(tmp_path / "p.yaml") == params


def test_parameter_file_rejects_unknown_keys(tmp_path):
    (tmp_path / "p.yaml").write_text("k0: 1.0\nbogus: 2\n")
    with pytest.raises(ValueError, match="bogus"):
        ReactorParameters.load(tmp_path / "p.yaml")


def test_arrhenius_domain(params):
    with pytest.raises(DomainError):
        reactor.arrhenius(0.0, params)
    assert reactor.arrhenius(300.0, params) == pytest.approx(params.k0 * np.exp(-params.ea_over_r / 300.0))


def test_drift3_zero_flow_conserves_heat_balance(params):
    # With no flow only the reaction acts: dn_A : dn_B : dn_T = -1 : -2 : beta.
    n = reactor.manifold_state(330.0, params)
    d = reactor.drift3(n, 0.0, params)
    assert d[1] / d[0] == pytest.approx(2.0)
    assert d[2] / d[0] == pytest.approx(-params.beta)


def test_drift3_vectorized(params, operating_flow):
    n = np.stack([reactor.manifold_state(t, params) for t in (300.0, 320.0, 340.0)], axis=1)
    lanes = reactor.drift3(n, operating_flow, params)
    for j in range(3):
        np.testing.assert_allclose(lanes[:, j], reactor.drift3(n[:, j], operating_flow, params))


def test_drift_rejects_non_finite(params):
    with pytest.raises(DivergenceError):
        reactor.drift3(np.array([np.nan, 0.0, 1.0]), 0.01, params)


def test_one_state_model_is_manifold_restriction(params, operating_flow):
    # On the invariant manifold the temperature component of the full model
    # equals the reduced drift.
    for t in (290.0, 320.0, 332.45, 345.0):
        n = reactor.manifold_state(t, params)
        assert reactor.drift3(n, operating_flow, params)[2] == pytest.approx(
            reactor.drift1(n[2], operating_flow, params), rel=1e-12, abs=1e-12
        )


def test_operating_point(params, operating_flow):
    n_t = reactor.steady_state(operating_flow, params, reactor.celsius_to_kelvin(59.3))
    assert reactor.kelvin_to_celsius(n_t / params.volume) == pytest.approx(59.30, abs=1e-6)
    assert abs(reactor.drift1(n_t, operating_flow, params)) < 1e-9
    assert reactor.is_stable(n_t, operating_flow, params)


def test_three_steady_states_in_fold_region(params, operating_flow):
    roots = reactor.steady_states(operating_flow, params)
    assert roots.size == 3
    stable = [reactor.is_stable(r * params.volume, operating_flow, params) for r in roots]
    assert stable == [True, False, True]


def test_linearization_matches_finite_differences(params, operating_flow):
    n_t = reactor.steady_state(operating_flow, params, reactor.celsius_to_kelvin(59.3))
    a_c, b_c = reactor.linearize(n_t, operating_flow, params)
    h = 1e-6 * n_t
    fd_a = (reactor.drift1(n_t + h, operating_flow, params) - reactor.drift1(n_t - h, operating_flow, params)) / (2 * h)
    hu = 1e-6 * operating_flow
    fd_b = (reactor.drift1(n_t, operating_flow + hu, params) - reactor.drift1(n_t, operating_flow - hu, params)) / (2 * hu)
    assert a_c[0, 0] == pytest.approx(fd_a, rel=1e-6)
    assert b_c[0, 0] == pytest.approx(fd_b, rel=1e-6)


def test_linearize_requires_equilibrium(params, operating_flow):
    with pytest.raises(ValueError):
        reactor.linearize(320.0 * params.volume, operating_flow, params)


def test_discrete_model_anchor(plant):
    assert plant.a[0, 0] == pytest.approx(0.9572, abs=5e-4)
    assert plant.b[0, 0] == pytest.approx(-57.5381, abs=0.05)
    np.testing.assert_allclose(plant.c, [[1 / 0.105]])
    np.testing.assert_array_equal(plant.c, plant.cz)


def test_discretization_semigroup(params):
    one = reactor.cstr_state_space(params, ts=1.0)
    half = reactor.cstr_state_space(params, ts=0.5)
    assert half.a[0, 0] ** 2 == pytest.approx(one.a[0, 0], rel=1e-12)
    assert half.a[0, 0] * half.b[0, 0] + half.b[0, 0] == pytest.approx(one.b[0, 0], rel=1e-12)


def test_calibration_is_idempotent(params):
    again, res = reactor.calibrate(params)
    assert again.k0 == pytest.approx(params.k0, rel=1e-9)
    assert again.beta == pytest.approx(params.beta, rel=1e-9)
    assert abs(res[0]) < 1e-6 and abs(res[1]) < 1e-9


def test_calibration_from_literature_reaches_defaults(params):
    cal, _ = reactor.calibrate(ReactorParameters.literature())
    assert cal.k0 == pytest.approx(params.k0, rel=1e-6)
    assert cal.beta == pytest.approx(params.beta, rel=1e-6)


def test_sweep_passes_operating_point(params, operating_flow):
    rows = reactor.steady_sweep([operating_flow], params)
    temps = [reactor.kelvin_to_celsius(t) for _, t, _ in rows]
    assert min(abs(t - 59.30) for t in temps) < 0.05


def test_sweep_empty_grid(params):
    assert reactor.steady_sweep([], params) == []


def test_sweep_stable_branches_monotone(params):
    flows = reactor.ml_min_to_l_s(np.linspace(1.0, 1000.0, 120))
    rows = reactor.steady_sweep(flows, params)
    upper = [(f, t) for f, t, s in rows if s and t > 320.0]
    lower = [(f, t) for f, t, s in rows if s and t <= 320.0]
    assert len(upper) > 10 and len(lower) > 10
    for branch in (upper, lower):
        temps = [t for _, t in sorted(branch)]
        assert np.all(np.diff(temps) <= 1e-9)


def test_flow_outside_bounds_rejected(params):
    with pytest.raises(ValueError):
        reactor.steady_states(reactor.ml_min_to_l_s(2000.0), params)


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 1000.0))
def test_steady_states_are_roots(params, flow_ml):
    flow = reactor.ml_min_to_l_s(flow_ml)
    for t in reactor.steady_states(flow, params):
        assert abs(reactor.drift1(t * params.volume, flow, params)) < 1e-9
