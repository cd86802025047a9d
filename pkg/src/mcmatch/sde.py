"""Euler-Maruyama integration and the closed-loop simulation engine.

The plant evolves as ``dx = f(t, x, u) dt + sigma(t, x, u) dW`` between
sampling instants, with the input held constant over each interval. At every
sample the measurement ``y = g(x) + v``, ``v ~ N(0, rv)``, is handed to the
controller. All array code is vectorized over independent *lanes* (paths),
stored along the last axis of the state.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reactor
from ._validation import as_vector, check_scalar
from .exceptions import DivergenceError, SimulationError
from .reactor import ZERO_CELSIUS, ML_MIN_PER_L_S
from .rng import batch_noise

PENALTY = 1e6
"""Objective value assigned to a diverged path when an objective must be finite."""


@dataclass(frozen=True)
class SdeSystem:
    """Continuous-discrete stochastic system.

    Callables take the state with shape ``(n_states, L)`` and the input with
    shape ``(L,)``:

    * ``drift(t, x, u) -> (n_states, L)``
    * ``diffusion(t, x, u) -> (n_states, n_wiener, L)``
    * ``measurement(t, x) -> (L,)``, the noise-free part of ``y``
    * ``output(t, x) -> (L,)``, the controlled output ``z``
    """

    drift: object
    diffusion: object
    measurement: object
    output: object
    n_states: int
    n_wiener: int = 1
    rv: float = 0.0
    name: str = ""

    def __post_init__(self):
        check_scalar(self.rv, "rv", lo=0.0)
        check_scalar(self.n_states, "n_states", lo=1, integral=True)
        check_scalar(self.n_wiener, "n_wiener", lo=1, integral=True)


def cstr3_system(params):
    """Three-state CSTR with inlet-temperature noise ``F sigma_T`` on ``n_T``."""
    v = params.volume
    sigma = params.sigma_t

    def drift(t, x, u):
        return reactor.drift3(x, u, params)

    def diffusion(t, x, u):
        out = np.zeros((3, 1) + np.shape(u))
        out[2, 0] = u * sigma
        return out

    def temperature(t, x):
        return x[2] / v

    return SdeSystem(drift, diffusion, temperature, temperature, 3, 1, params.rv, "cstr3")


def cstr1_system(params):
    """One-state (temperature) CSTR with the same noise model."""
    v = params.volume
    sigma = params.sigma_t

    def drift(t, x, u):
        return np.asarray(reactor.drift1(x, u, params))

    def diffusion(t, x, u):
        return (u * sigma)[None, None] * np.ones((1, 1) + np.shape(u))

    def temperature(t, x):
        return x[0] / v

    return SdeSystem(drift, diffusion, temperature, temperature, 1, 1, params.rv, "cstr1")


def linear_sde(a, s, rv=0.0):
    """Scalar test equation ``dx = a x dt + s dW``; the input is ignored."""

    def drift(t, x, u):
        return a * x

    def diffusion(t, x, u):
        return np.full((1, 1) + x.shape[1:], float(s))

    def ident(t, x):
        return x[0]

    return SdeSystem(drift, diffusion, ident, ident, 1, 1, rv, "linear")


def _em(system, t, x, u, dt, dw):
    f = system.drift(t, x, u)
    g = system.diffusion(t, x, u)
    return x + f * dt + np.einsum("iw...,w...->i...", g, dw)


def em_step(system, t, x, u, dt, dw):
    """One Euler-Maruyama step ``x + f dt + sigma dW``.

    ``dw`` holds the Wiener increments (variance ``dt``), shape
    ``(n_wiener,)`` or ``(n_wiener, L)`` matching ``x``.

    Raises
    ------
    DivergenceError
        If the new state is not finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = _em(system, t, x, u, dt, np.asarray(dw, dtype=float))
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"non-finite state at t={t}", t=t, x=x, u=u)
    return x_next


@dataclass(frozen=True)
class SimConfig:
    """Time grid, integration and seeding of a closed-loop run."""

    t0: float = 0.0
    tf: float = 300.0
    ts: float = 1.0
    substeps: int = 10
    seed: int = 0
    x0: np.ndarray = None

    def __post_init__(self):
        check_scalar(self.ts, "ts", lo=0.0, strict_lo=True)
        check_scalar(self.substeps, "substeps", lo=1, integral=True)
        check_scalar(self.seed, "seed", lo=0, hi=2**64 - 1, integral=True)
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")
        ratio = (self.tf - self.t0) / self.ts
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("(tf - t0) / ts must be an integer")
        if self.x0 is not None:
            object.__setattr__(self, "x0", as_vector(self.x0, "x0"))

    @property
    def n_samples(self):
        """Number of sampling intervals; the record holds ``n_samples + 1`` samples."""
        return int(round((self.tf - self.t0) / self.ts))

    @property
    def times(self):
        return self.t0 + self.ts * np.arange(self.n_samples + 1)

    def replace(self, **changes):
        d = {k: getattr(self, k) for k in ("t0", "tf", "ts", "substeps", "seed", "x0")}
        d.update(changes)
        return SimConfig(**d)


@dataclass
class SimRecord:
    """One closed-loop trajectory sampled at ``t``.

    ``u[k]`` is the input applied over ``[t_k, t_{k+1})``; the last entry is
    the controller's response to the final measurement and is not applied.
    ``slack_lo``/``slack_hi`` are NaN for controllers without slacks. After a
    divergence every later sample is NaN and ``failed`` is set.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    integrator: np.ndarray
    slack_lo: np.ndarray
    slack_hi: np.ndarray
    seed: int = 0
    path: int = 0
    failed: bool = False
    error: str = None
    objectives: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.t.size

    def to_csv(self, path, celsius=False, ml_min=False):
        """Write the trajectory; optionally in degC and mL/min instead of K and L/s.

        The first line is a ``#`` comment holding seed, path, failure status
        and objective values as JSON.
        """
        t_off = ZERO_CELSIUS if celsius else 0.0
        f_scale = ML_MIN_PER_L_S if ml_min else 1.0
        meta = {
            "seed": int(self.seed),
            "path": int(self.path),
            "failed": bool(self.failed),
            "error": self.error,
            "objectives": {k: float(v) for k, v in self.objectives.items()},
            "celsius": bool(celsius),
            "ml_min": bool(ml_min),
        }
        nx = self.x.shape[1]
        header = ["t", *[f"x{i}" for i in range(nx)], "y", "z", "u", "integrator", "slack_lo", "slack_hi"]
        cols = np.column_stack(
            [
                self.t,
                self.x,
                self.y - t_off,
                self.z - t_off,
                self.u * f_scale,
                self.integrator * f_scale,
                self.slack_lo,
                self.slack_hi,
            ]
        )
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(meta) + "\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in cols:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        """Inverse of :meth:`to_csv`; values come back in K and L/s."""
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ValueError(f"{path}: missing metadata line")
            meta = json.loads(first[2:])
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        col = {name: data[:, i] for i, name in enumerate(header)}
        nx = sum(1 for h in header if h.startswith("x"))
        t_off = ZERO_CELSIUS if meta["celsius"] else 0.0
        f_scale = ML_MIN_PER_L_S if meta["ml_min"] else 1.0
        return cls(
            t=col["t"],
            x=data[:, 1 : 1 + nx],
            y=col["y"] + t_off,
            z=col["z"] + t_off,
            u=col["u"] / f_scale,
            integrator=col["integrator"] / f_scale,
            slack_lo=col["slack_lo"],
            slack_hi=col["slack_hi"],
            seed=meta["seed"],
            path=meta["path"],
            failed=meta["failed"],
            error=meta["error"],
            objectives=meta["objectives"],
        )


def _lane_attr(controller, name, n):
    val = getattr(controller, name, None)
    if val is None:
        return np.full(n, np.nan)
    return np.broadcast_to(np.asarray(val, dtype=float), (n,))


def _initial_state(system, config, n):
    if config.x0 is None:
        raise ValueError("SimConfig.x0 is required")
    x0 = config.x0
    if x0.size != system.n_states:
        raise ValueError(f"x0 has {x0.size} entries, system has {system.n_states} states")
    return np.repeat(x0[:, None], n, axis=1)


def simulate_lanes(system, controller, config, paths):
    """Simulate the paths in ``paths`` side by side with one controller instance.

    The controller must accept ``reset(n_lanes)`` and ``step(y, t) -> u``
    with ``y`` and ``u`` of shape ``(n_lanes,)``. It may expose
    ``integrator``, ``slack_lo`` and ``slack_hi`` lane arrays, which are
    recorded after each step.

    Lanes whose state becomes non-finite are frozen at their last finite
    state, marked failed and NaN-filled from the failing sample on; the
    other lanes are unaffected.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    n = paths.size
    big_k = config.n_samples
    subs = config.substeps
    dt = config.ts / subs
    sq = math.sqrt(dt)
    xi, eta = batch_noise(config.seed, paths, big_k, subs, system.n_wiener)
    sd_v = math.sqrt(system.rv)
    times = config.times

    x = _initial_state(system, config, n)
    nx = system.n_states
    xs = np.full((big_k + 1, nx, n), np.nan)
    cols = {k: np.full((big_k + 1, n), np.nan) for k in ("y", "z", "u", "integrator", "slack_lo", "slack_hi")}
    failed = np.zeros(n, dtype=bool)
    errors = [None] * n

    controller.reset(n)
    for k in range(big_k + 1):
        t = times[k]
        z = system.output(t, x)
        y = system.measurement(t, x) + sd_v * eta[:, k]
        try:
            u = np.broadcast_to(np.asarray(controller.step(y, t), dtype=float), (n,)).copy()
        except Exception as exc:
            raise SimulationError(f"controller failed at sample {k} (t={t}): {exc}", sample=k, t=t) from exc
        live = ~failed
        xs[k][:, live] = x[:, live]
        cols["y"][k, live] = y[live]
        cols["z"][k, live] = z[live]
        cols["u"][k, live] = u[live]
        for name in ("integrator", "slack_lo", "slack_hi"):
            cols[name][k, live] = _lane_attr(controller, name, n)[live]
        if k == big_k:
            break
        for s in range(subs):
            dw = sq * xi[:, k, s, :].T
            with np.errstate(over="ignore", invalid="ignore"):
                x_new = _em(system, t + s * dt, x, u, dt, dw)
            bad = ~np.all(np.isfinite(x_new), axis=0) & ~failed
            if bad.any():
                for j in np.flatnonzero(bad):
                    errors[j] = f"non-finite state at t={t + (s + 1) * dt:.6g} (sample {k})"
                failed |= bad
            x = np.where(failed[None, :], x, x_new)

    return [
        SimRecord(
            t=times.copy(),
            x=xs[:, :, j].copy(),
            **{name: arr[:, j].copy() for name, arr in cols.items()},
            seed=config.seed,
            path=int(paths[j]),
            failed=bool(failed[j]),
            error=errors[j],
        )
        for j in range(n)
    ]


def simulate_closed_loop(system, controller, config, path=0):
    """Single closed-loop trajectory for path index ``path``.

    Unlike :func:`run_ensemble`, a diverged path raises.

    Raises
    ------
    DivergenceError
    SimulationError
        If the controller raises; carries the sample index.
    """
    rec = simulate_lanes(system, controller, config, [path])[0]
    if rec.failed:
        raise DivergenceError(rec.error)
    return rec


@dataclass
class EnsembleResult:
    """Aggregates of an ensemble run.

    Objective arrays are indexed by path and hold NaN for failed paths;
    means, quantile bands and the violation fraction are over successful
    paths only.
    """

    t: np.ndarray
    paths: np.ndarray
    failed: np.ndarray
    objectives: dict
    violation: np.ndarray
    threshold: float
    bands: dict
    records: list = None

    @property
    def n_failed(self):
        return int(self.failed.sum())

    @property
    def violation_fraction(self):
        ok = ~self.failed
        return float(np.mean(self.violation[ok])) if ok.any() else float("nan")

    def objective_mean(self, name):
        v = self.objectives[name][~self.failed]
        return float(np.mean(v)) if v.size else float("nan")

    def objective_var(self, name):
        v = self.objectives[name][~self.failed]
        return float(np.var(v, ddof=1)) if v.size > 1 else float("nan")

    def penalized(self, name):
        """Per-path objective with failed paths set to :data:`PENALTY`."""
        v = self.objectives[name].copy()
        v[self.failed] = PENALTY
        return v

    def summary(self):
        return {
            "n_paths": int(self.paths.size),
            "n_failed": self.n_failed,
            "threshold": self.threshold,
            "violation_fraction": self.violation_fraction,
            "objectives": {
                name: {
                    "mean": self.objective_mean(name),
                    "var": self.objective_var(name),
                    "values": [None if not np.isfinite(v) else float(v) for v in vals],
                }
                for name, vals in self.objectives.items()
            },
            "t": self.t.tolist(),
            "bands": {k: np.asarray(v).tolist() for k, v in self.bands.items()},
            "paths": self.paths.tolist(),
            "failed": self.failed.tolist(),
            "violation": self.violation.tolist(),
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=1))

    @classmethod
    def from_json(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(
            t=np.array(d["t"]),
            paths=np.array(d["paths"], dtype=np.int64),
            failed=np.array(d["failed"], dtype=bool),
            objectives={
                k: np.array([np.nan if v is None else v for v in o["values"]], dtype=float)
                for k, o in d["objectives"].items()
            },
            violation=np.array(d["violation"], dtype=float),
            threshold=d["threshold"],
            bands={k: np.array(v, dtype=float) for k, v in d["bands"].items()},
        )


def _bands(records, ok):
    out = {}
    for name in ("z", "u"):
        if ok.any():
            m = np.array([getattr(r, name) for r, good in zip(records, ok) if good])
            out[f"{name}_mean"] = m.mean(axis=0)
            out[f"{name}_var"] = m.var(axis=0)
            q = np.quantile(m, [0.025, 0.5, 0.975], axis=0)
            out[f"{name}_q025"], out[f"{name}_median"], out[f"{name}_q975"] = q
        else:
            nanrow = np.full(records[0].t.size, np.nan)
            for key in ("mean", "var", "q025", "median", "q975"):
                out[f"{name}_{key}"] = nanrow
    return out


def run_ensemble(
    system,
    controller_factory,
    config,
    n_paths,
    threshold=None,
    objectives=None,
    first_path=0,
    chunk_size=256,
    n_jobs=1,
    keep_records=True,
):
    """Run ``n_paths`` independent closed-loop paths and aggregate them.

    Path ``i`` uses the noise stream ``(config.seed, first_path + i)``, so
    results do not depend on ``chunk_size`` or ``n_jobs``. Paths are grouped
    into chunks, each simulated with a fresh controller from
    ``controller_factory()``.

    Parameters
    ----------
    threshold : float, optional
        Output level for the violation statistic (fraction of samples with
        ``z < threshold``).
    objectives : dict of name -> callable(SimRecord) -> float, optional
    n_jobs : int
        Threads used to simulate chunks concurrently.

    Diverged paths do not raise; they are counted in ``n_failed``.
    """
    check_scalar(n_paths, "n_paths", lo=1, integral=True)
    check_scalar(chunk_size, "chunk_size", lo=1, integral=True)
    objectives = objectives or {}
    paths = first_path + np.arange(n_paths, dtype=np.int64)
    chunks = [paths[i : i + chunk_size] for i in range(0, n_paths, chunk_size)]

    def work(chunk):
        return simulate_lanes(system, controller_factory(), config, chunk)

    if n_jobs == 1:
        parts = [work(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, chunks))
    records = [r for part in parts for r in part]

    failed = np.array([r.failed for r in records], dtype=bool)
    obj = {}
    for name, fn in objectives.items():
        vals = np.full(n_paths, np.nan)
        for i, r in enumerate(records):
            if not r.failed:
                vals[i] = fn(r)
                r.objectives[name] = float(vals[i])
        obj[name] = vals
    thr = -np.inf if threshold is None else float(threshold)
    violation = np.array([np.mean(r.z < thr) if not r.failed else np.nan for r in records])
    return EnsembleResult(
        t=config.times,
        paths=paths,
        failed=failed,
        objectives=obj,
        violation=violation,
        threshold=None if threshold is None else thr,
        bands=_bands(records, ~failed),
        records=records if keep_records else None,
    )
