"""End-to-end acceptance checks.

Each test prints one ``CRITERION n: PASS|FAIL`` line (visible with ``-v``
as well as ``-s``) before asserting, so a failing criterion still reports
its measured numbers.
"""

import math
import os
import time

import numpy as np
import pytest

from mcmatch import reactor
from mcmatch.fastpi import pi_noise, simulate_pi_batch
from mcmatch.matching import build_augmented, match, match_gain, mpc_feedback
from mcmatch.mpc import MatchedMPC
from mcmatch.numerics import DenseQp, LmiProblem, solve_qp
from mcmatch.pi import PIController
from mcmatch.sde import SimConfig, cstr3_system, linear_sde, run_ensemble, simulate_lanes
from mcmatch.tuning import GridSpec, TuningObjective, evaluate_objective, tune_gain
from oracles import ConstantController, enumerate_qp, random_qp, random_stable_system


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return emit


def test_criterion_1_matched_mpc_reproduces_pi(cfg, params, plant, phi2_gains, report):
    start = time.perf_counter()
    cost = match(build_augmented(plant, phi2_gains), **cfg.soft_weights())
    quiet = cstr3_system(params.replace(sigma_t=0.0, rv=0.0))
    worst_u = worst_z = 0.0
    n_qp = 0
    for offset in (0.0, 1.0, -0.2):
        sim = SimConfig(tf=300.0, x0=reactor.manifold_state(phi2_gains.y_bar + offset, params))
        pi = simulate_lanes(quiet, PIController.from_gains(phi2_gains), sim, [0])[0]
        ctrl = MatchedMPC(plant, phi2_gains, cost, horizon=50, z_min=cfg.z_bounds()[0])
        mpc = simulate_lanes(quiet, ctrl, sim, [0])[0]
        n_qp += ctrl.n_qp_
        worst_u = max(worst_u, float(np.max(np.abs(pi.u - mpc.u))))
        worst_z = max(worst_z, float(np.max(np.abs(pi.z - mpc.z))))
    elapsed = time.perf_counter() - start
    ok = worst_u <= 1e-6 and worst_z <= 1e-6 and elapsed < 5.0
    report(1, ok, f"max|du|={worst_u:.2e} L/s, max|dz|={worst_z:.2e} K, constrained QPs={n_qp}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_matching_identity(report):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_gain = 0.0
    worst_cert = -np.inf
    for i in range(100):
        a, b, k = random_stable_system(rng, 1 + i % 4)
        cost, sol = match_gain(a, b, k, tol=1e-7)
        for horizon in (1, 5, 50):
            worst_gain = max(worst_gain, float(np.max(np.abs(mpc_feedback(cost, a, b, horizon) - k))))
        # I <= H <= beta I, re-checked with LAPACK rather than the package's own eigensolver
        ev = np.linalg.eigvalsh(LmiProblem(a, b, k).h(sol.gamma, sol.p))
        worst_cert = max(worst_cert, 1.0 - ev[0], ev[-1] - sol.beta)
    elapsed = time.perf_counter() - start
    ok = worst_gain <= 1e-8 and worst_cert <= 1e-7 and elapsed < 30.0
    report(2, ok, f"max|K_mpc-K|={worst_gain:.2e}, worst certificate violation={worst_cert:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_3_plant_anchor(params, report):
    ss = reactor.cstr_state_space(params, flow=reactor.ml_min_to_l_s(630.0), ts=1.0)
    t_ss = reactor.kelvin_to_celsius(ss.y_s[0])
    a, b = ss.a[0, 0], ss.b[0, 0]
    ok = abs(a - 0.9572) <= 5e-4 and abs(b + 57.5381) <= 0.05 and abs(t_ss - 59.30) <= 0.05
    report(3, ok, f"A={a:.6f}, B={b:.4f}, T_ss(630 mL/min)={t_ss:.4f} degC")
    assert ok


def test_criterion_4_qp_oracle(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        n, m = int(rng.integers(1, 9)), int(rng.integers(0, 7))
        h, g, a, b = random_qp(rng, n, m)
        x_ref, _ = enumerate_qp(h, g, a, b)
        res = solve_qp(DenseQp(h, g, a, lo=np.full(m, -np.inf), hi=b))
        worst = max(worst, float(np.max(np.abs(res.x - x_ref))))
    ok = worst <= 1e-8
    report(4, ok, f"500 QPs, max|x - x_enum|={worst:.2e}")
    assert ok


def test_criterion_5_sde_moments(report):
    a, s, x0, tf, n_paths = -1.0, 1.0, 1.0, 1.0, 100_000
    sim = SimConfig(tf=tf, ts=0.1, substeps=100, x0=[x0], seed=5)
    ens = run_ensemble(linear_sde(a, s), ConstantController, sim, n_paths, chunk_size=n_paths, keep_records=False)
    mean_true = x0 * math.exp(a * tf)
    var_true = s**2 * (math.exp(2 * a * tf) - 1) / (2 * a)
    mean, var = ens.bands["z_mean"][-1], ens.bands["z_var"][-1]
    se_mean = math.sqrt(var_true / n_paths)
    se_var = var_true * math.sqrt(2.0 / (n_paths - 1))
    zm, zv = (mean - mean_true) / se_mean, (var - var_true) / se_var
    ok = abs(zm) <= 3 and abs(zv) <= 3
    report(5, ok, f"mean {mean:.5f} vs {mean_true:.5f} ({zm:+.2f} SE), var {var:.5f} vs {var_true:.5f} ({zv:+.2f} SE)")
    assert ok


def _curve(name, obj, gains, params, seed, paths=1000):
    grid = GridSpec(name, count=100, paths=paths)
    start = time.perf_counter()
    c = tune_gain(grid, gains, obj, params, SimConfig(tf=300.0, seed=seed))
    return c, time.perf_counter() - start


def test_criterion_6_tuning_behavior(params, gains, report):
    found, times, lines = {}, [], []
    for kind in ("phi1", "phi2"):
        obj = TuningObjective(kind)
        kp, t1 = _curve("kp", obj, gains, params, seed=0)
        ki, t2 = _curve("ki", obj, gains.replace(kp=kp.best), params, seed=0)
        found[kind] = (kp, ki)
        times += [t1, t2]
        lines.append(f"{kind}: kp={kp.best:.3g} (idx {kp.best_index}), ki={ki.best:.3g} (idx {ki.best_index})")
    interior = all(c.is_interior() for pair in found.values() for c in pair)
    ordered = abs(found["phi2"][0].best) < abs(found["phi1"][0].best)

    obj2 = TuningObjective("phi2")
    a, _ = _curve("kp", obj2, gains, params, seed=0, paths=100)
    b, _ = _curve("kp", obj2, gains, params, seed=0, paths=100)
    deterministic = np.array_equal(a.mean, b.mean)

    kp1, ki1 = found["phi2"]
    kp_alt, _ = _curve("kp", obj2, gains, params, seed=1)
    ki_alt, _ = _curve("ki", obj2, gains.replace(kp=kp1.best), params, seed=1)
    shift = max(abs(kp_alt.best_index - kp1.best_index), abs(ki_alt.best_index - ki1.best_index))

    cores = len(os.sched_getaffinity(0))
    slowest = max(times)
    ok = interior and ordered and deterministic and shift <= 2 and slowest < 60.0
    report(6, ok, "; ".join(lines) + f"; interior={interior}, |kp2|<|kp1|={ordered}, "
           f"deterministic={deterministic}, argmin shift across seed sets={shift} cells, "
           f"slowest gain {slowest:.1f} s on {cores} core(s)")
    assert ok


def test_criterion_7_constraint_violation(cfg, params, plant, phi2_gains, report):
    start = time.perf_counter()
    n_paths = 100
    sim = cfg.sim_config(seed=1)
    z_min, _ = cfg.z_bounds()
    t_min = cfg.t_min
    cost = match(build_augmented(plant, phi2_gains), **cfg.soft_weights())
    objectives = {
        kind: (lambda r, o=TuningObjective(kind).with_references(phi2_gains.y_bar, phi2_gains.u_bar):
               evaluate_objective(r, o))
        for kind in ("phi1", "phi2")
    }
    factories = {
        "pi": lambda: PIController.from_gains(phi2_gains),
        "mpc": lambda: MatchedMPC(plant, phi2_gains, cost, horizon=50, z_min=z_min),
    }
    res = {k: run_ensemble(cstr3_system(params), f, sim, n_paths, threshold=z_min, objectives=objectives)
           for k, f in factories.items()}
    elapsed = time.perf_counter() - start

    def below(ens, thr):
        return float(np.mean([np.mean(r.z < thr) for r in ens.records if not r.failed]))

    v_pi, v_mpc = res["pi"].violation_fraction, res["mpc"].violation_fraction
    c_pi, c_mpc = below(res["pi"], t_min), below(res["mpc"], t_min)
    rel = {k: res["mpc"].objective_mean(k) / res["pi"].objective_mean(k) - 1 for k in ("phi1", "phi2")}
    ratio = v_mpc / v_pi if v_pi > 0 else float("inf")
    ok = ratio <= 0.1 and all(abs(r) <= 0.25 for r in rel.values()) and elapsed < 120.0
    report(7, ok,
           f"below 59.0 degC: PI {100 * v_pi:.2f}%, MPC {100 * v_mpc:.2f}% (ratio {ratio:.3f}); "
           f"phi1 PI {res['pi'].objective_mean('phi1'):.1f} / MPC {res['mpc'].objective_mean('phi1'):.1f} "
           f"({100 * rel['phi1']:+.0f}%); phi2 PI {res['pi'].objective_mean('phi2'):.1f} / "
           f"MPC {res['mpc'].objective_mean('phi2'):.1f} ({100 * rel['phi2']:+.0f}%); "
           f"[info] below 57.26 degC: PI {100 * c_pi:.2f}%, MPC {100 * c_mpc:.3f}% (ratio "
           f"{c_mpc / c_pi if c_pi else float('nan'):.3f}); failed paths {res['pi'].n_failed}/{res['mpc'].n_failed}; "
           f"{elapsed:.0f} s")
    assert ok


def test_criterion_8_throughput(params, gains, report):
    sim = SimConfig(tf=300.0, substeps=10, seed=8, x0=reactor.manifold_state(gains.y_bar, params))
    n_paths, n_gains = 1000, 20
    kp = np.linspace(-2e-3, -1e-4, n_gains)
    simulate_pi_batch(params, gains, kp[:1], gains.ki, gains.kaw, sim, np.arange(2))  # compile / warm cache
    noise = pi_noise(sim, np.arange(n_paths))
    start = time.perf_counter()
    b = simulate_pi_batch(params, gains, kp, gains.ki, gains.kaw, sim, np.arange(n_paths), noise=noise)
    elapsed = time.perf_counter() - start
    rate = b.sum_e2.size / elapsed
    cores = len(os.sched_getaffinity(0))
    target = 10_000
    report(8, True, f"{rate:,.0f} closed-loop PI simulations/s on {cores} core(s) "
           f"(soft target {target:,}/s on 6 cores: {'met' if rate >= target else 'not met'}; reported only)")
