"""Command-line front end: ``mcmatch <command> [options]``.

Every command writes into ``--out`` (default: the config's ``out``) and
leaves a ``manifest.json`` recording the config hash, package versions and
seeds. Temperatures in emitted files are in degC and flows in mL/min.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import reactor
from .config import ExperimentConfig, load_gains, save_gains, write_manifest
from .exceptions import McMatchError
from .matching import build_augmented, match, mpc_feedback_of
from .mpc import MatchedMPC
from .pi import PIController
from .sde import cstr3_system, run_ensemble, simulate_closed_loop
from .tuning import evaluate_objective, tune_pi


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _flow_grid(text):
    """``start:stop:count`` in mL/min; ``count`` may be 0."""
    try:
        start, stop, count = text.split(":")
        count = int(count)
        if count < 0:
            raise ValueError
        return np.linspace(float(start), float(stop), count)
    except ValueError:
        raise argparse.ArgumentTypeError("expected START:STOP:COUNT") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment YAML file")
    common.add_argument("--seed", type=_seed, help="base seed (overrides sim.seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides out)")

    parser = argparse.ArgumentParser(prog="mcmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit k0 and beta to the plant anchors")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("steady-sweep", parents=[common], help="steady-state temperature over a flow grid")
    p.add_argument("--flows", type=_flow_grid, default=_flow_grid("0:1000:201"),
                   help="START:STOP:COUNT in mL/min (default 0:1000:201)")
    p.set_defaults(func=cmd_steady_sweep)

    p = sub.add_parser("simulate", parents=[common], help="one closed-loop trajectory")
    p.add_argument("--controller", choices=("pi", "mpc"), default="pi")
    p.add_argument("--path", type=int, default=0, help="path index of the noise stream")
    p.add_argument("--gains", type=Path, help="gain file overriding the config's pi section")
    p.add_argument("--noise-free", action="store_true", help="set sigma_T and R_v to zero")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", parents=[common], help="Monte Carlo coordinate tuning of the PI gains")
    p.add_argument("--objective", choices=("phi1", "phi2"))
    p.add_argument("--paths", type=_positive_int, help="paths per grid point")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("match", parents=[common], help="match an MPC stage cost to the PI gains")
    p.add_argument("--gains", type=Path)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("run", parents=[common], help="closed-loop ensemble for one controller")
    p.add_argument("--controller", choices=("pi", "mpc"), default="pi")
    p.add_argument("--paths", type=_positive_int)
    p.add_argument("--gains", type=Path)
    p.add_argument("--save-records", action="store_true", help="write every trajectory as CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="PI and matched MPC on identical seeds")
    p.add_argument("--paths", type=_positive_int)
    p.add_argument("--gains", type=Path)
    p.add_argument("--noise-free", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def _setup(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out if args.out is not None else cfg.resolve(cfg.data["out"]))
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(cfg.data["sim"]["seed"])
    return cfg, out, seed


def _gains(cfg, args):
    overrides = load_gains(args.gains) if getattr(args, "gains", None) else None
    return cfg.gains(overrides)


def _system(cfg, noise_free=False):
    params = cfg.params
    if noise_free:
        params = params.replace(sigma_t=0.0, rv=0.0)
    return cstr3_system(params)


def _controller_factory(cfg, kind, gains):
    if kind == "pi":
        return lambda: PIController.from_gains(gains)
    cost = cfg.stage_cost(gains)
    z_min, z_max = cfg.z_bounds()
    horizon = int(cfg.data["mpc"]["horizon"])
    plant = cfg.plant()
    return lambda: MatchedMPC(plant, gains, cost, horizon, z_min=z_min, z_max=z_max)


def _objectives(cfg, gains):
    refs = dict(z_ref=gains.y_bar, u_ref=gains.u_bar)
    out = {}
    for kind in ("phi1", "phi2"):
        obj = cfg.objective(kind).with_references(**refs)
        out[kind] = lambda r, obj=obj: evaluate_objective(r, obj)
    return out


def cmd_calibrate(args):
    cfg, out, seed = _setup(args)
    start = reactor.ReactorParameters.literature()
    op = cfg.data["operating_point"]
    target = reactor.celsius_to_kelvin(op["temperature"])
    flow = reactor.ml_min_to_l_s(op["flow"])
    params, res = reactor.calibrate(start, target_temperature=target, flow=flow)
    path = out / "reactor.yaml"
    params.save(path)
    ss = reactor.cstr_state_space(params, flow, target)
    info = {
        "k0": params.k0,
        "beta": params.beta,
        "A": float(ss.a[0, 0]),
        "B": float(ss.b[0, 0]),
        "steady_state_c": float(reactor.kelvin_to_celsius(ss.y_s[0])),
        "residual_temperature": res[0],
        "residual_A": res[1],
    }
    for k, v in info.items():
        print(f"{k:>22s} = {v:.10g}")
    write_manifest(out, "calibrate", cfg, {}, {"result": info, "file": path.name})
    return 0


def cmd_steady_sweep(args):
    cfg, out, seed = _setup(args)
    params = cfg.params
    flows = reactor.ml_min_to_l_s(np.asarray(args.flows, dtype=float))
    rows = reactor.steady_sweep(flows, params)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow_ml_min", "temperature_c", "stable"])
        for f, t, stable in rows:
            w.writerow([repr(reactor.l_s_to_ml_min(f)), repr(reactor.kelvin_to_celsius(t)), int(stable)])
    print(f"wrote {len(rows)} steady states to {path}")
    write_manifest(out, "steady-sweep", cfg, {}, {"n_flows": int(np.size(flows))})
    return 0


def read_sweep(path):
    """Rows ``(flow_ml_min, temperature_c, stable)`` of a sweep CSV."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(float(f), float(t), bool(int(s))) for f, t, s in r]


def cmd_simulate(args):
    cfg, out, seed = _setup(args)
    gains = _gains(cfg, args)
    sim = cfg.sim_config(seed)
    ctrl = _controller_factory(cfg, args.controller, gains)()
    rec = simulate_closed_loop(_system(cfg, args.noise_free), ctrl, sim, path=args.path)
    for name, fn in _objectives(cfg, gains).items():
        rec.objectives[name] = fn(rec)
    path = out / f"trajectory_{args.controller}.csv"
    rec.to_csv(path, celsius=True, ml_min=True)
    print(f"wrote {path}; " + ", ".join(f"{k} = {v:.6g}" for k, v in rec.objectives.items()))
    write_manifest(out, "simulate", cfg, {"seed": seed, "path": args.path})
    return 0


def cmd_tune(args):
    cfg, out, seed = _setup(args)
    kind = args.objective or cfg.data["objective"]["kind"]
    obj = cfg.objective(kind)
    base = cfg.gains()
    sim = cfg.sim_config(seed)
    grids = cfg.grids(args.paths)
    t0 = time.perf_counter()
    res = tune_pi(grids, base, obj, cfg.params, sim, crn=bool(cfg.data["tuning"]["crn"]))
    elapsed = time.perf_counter() - t0
    gains_path = out / f"gains_{kind}.yaml"
    save_gains(res.gains, gains_path)
    for name, curve in res.curves.items():
        curve.to_csv(out / f"curve_{kind}_{name}.csv")
        print(f"{name:>4s} = {curve.best:.6g} (grid index {curve.best_index}, mean {curve.mean[curve.best_index]:.6g})")
    n_sims = sum(g.paths * (g.count + 1) for g in grids.values())
    print(f"{n_sims} simulations in {elapsed:.1f} s")
    write_manifest(out, "tune", cfg, {"seed": seed}, {
        "objective": kind, "gains_file": gains_path.name, "elapsed_s": elapsed, "simulations": n_sims,
    })
    return 0


def cmd_match(args):
    cfg, out, seed = _setup(args)
    gains = _gains(cfg, args)
    aug = build_augmented(cfg.plant(), gains)
    cost = match(aug, **cfg.soft_weights())
    path = out / "cost.yaml"
    cost.save(path)
    horizon = int(cfg.data["mpc"]["horizon"])
    err = float(np.max(np.abs(mpc_feedback_of(cost, aug, horizon) - aug.k_hat)))
    print(f"beta = {cost.beta:.6g}; |K_mpc - K_hat| = {err:.3e} at horizon {horizon}; wrote {path}")
    write_manifest(out, "match", cfg, {}, {"beta": cost.beta, "gain_error": err, "file": path.name})
    return 0


def _ensemble(cfg, kind, gains, sim, n_paths, noise_free=False):
    z_min, _ = cfg.z_bounds()
    return run_ensemble(
        _system(cfg, noise_free), _controller_factory(cfg, kind, gains), sim, n_paths,
        threshold=z_min if z_min is not None else cfg.t_min,
        objectives=_objectives(cfg, gains),
    )


def _path_table(ens, t_min, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = sorted(ens.objectives)
        w.writerow(["path", "failed", *names, "violation", "below_t_min"])
        for i, rec in enumerate(ens.records):
            below = float(np.mean(rec.z < t_min)) if not rec.failed else float("nan")
            w.writerow([int(ens.paths[i]), int(ens.failed[i]),
                        *[repr(float(ens.objectives[n][i])) for n in names],
                        repr(float(ens.violation[i])), repr(below)])


def _stats(ens, t_min):
    ok = ~ens.failed
    below = [float(np.mean(r.z < t_min)) for r, good in zip(ens.records, ok) if good]
    return {
        "phi1": ens.objective_mean("phi1"),
        "phi2": ens.objective_mean("phi2"),
        "violation_fraction": ens.violation_fraction,
        "below_t_min_fraction": float(np.mean(below)) if below else float("nan"),
        "n_failed": ens.n_failed,
    }


def cmd_run(args):
    cfg, out, seed = _setup(args)
    gains = _gains(cfg, args)
    n = args.paths or cfg.n_paths
    ens = _ensemble(cfg, args.controller, gains, cfg.sim_config(seed), n)
    ens.to_json(out / f"ensemble_{args.controller}.json")
    _path_table(ens, cfg.t_min, out / f"paths_{args.controller}.csv")
    if args.save_records:
        rec_dir = out / f"records_{args.controller}"
        rec_dir.mkdir(exist_ok=True)
        for rec in ens.records:
            rec.to_csv(rec_dir / f"path_{rec.path:06d}.csv", celsius=True, ml_min=True)
    stats = _stats(ens, cfg.t_min)
    print(json.dumps(stats, indent=1))
    write_manifest(out, "run", cfg, {"seed": seed, "paths": [0, n]}, {"controller": args.controller, **stats})
    return 0


def cmd_compare(args):
    cfg, out, seed = _setup(args)
    gains = _gains(cfg, args)
    n = args.paths or cfg.n_paths
    sim = cfg.sim_config(seed)
    report = {"n_paths": n, "seed": seed, "z_min_c": cfg.data["mpc"]["z_min"],
              "t_min_c": cfg.data["operating_point"]["t_min"]}
    ens = {}
    for kind in ("pi", "mpc"):
        ens[kind] = _ensemble(cfg, kind, gains, sim, n, args.noise_free)
        ens[kind].to_json(out / f"ensemble_{kind}.json")
        _path_table(ens[kind], cfg.t_min, out / f"paths_{kind}.csv")
        report[kind] = _stats(ens[kind], cfg.t_min)
    both = ~(ens["pi"].failed | ens["mpc"].failed)
    if both.any():
        zp = np.array([r.z for r, ok in zip(ens["pi"].records, both) if ok])
        zm = np.array([r.z for r, ok in zip(ens["mpc"].records, both) if ok])
        up = np.array([r.u for r, ok in zip(ens["pi"].records, both) if ok])
        um = np.array([r.u for r, ok in zip(ens["mpc"].records, both) if ok])
        report["max_abs_z_difference_k"] = float(np.max(np.abs(zp - zm)))
        report["max_abs_u_difference_ml_min"] = float(np.max(np.abs(up - um)) * reactor.ML_MIN_PER_L_S)
    (out / "report.json").write_text(json.dumps(report, indent=1))
    print(json.dumps(report, indent=1))
    write_manifest(out, "compare", cfg, {"seed": seed, "paths": [0, n]})
    return 0


def read_report(path):
    return json.loads(Path(path).read_text())


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (McMatchError, ValueError, FileNotFoundError) as exc:
        print(f"mcmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
