"""Monte Carlo grid tuning of PI gains.

Each gain is tuned in turn over an equidistant grid; every grid point is
scored by the closed-loop objective averaged over many simulated noise
realizations of the three-state CSTR. By default all grid points share the
same noise paths (common random numbers), which makes the curve smooth and
its argmin stable.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import reactor
from ._validation import check_scalar
from .exceptions import McMatchError
from .fastpi import pi_noise, simulate_pi_batch
from .pi import PiGains
from .sde import PENALTY

GAIN_NAMES = ("kp", "ki", "kaw")

DEFAULT_RANGES = {
    "kp": (-5e-3, -1e-5),
    "ki": (-1e-3, -1e-6),
    "kaw": (0.0, 1.0),
}


class TuningError(McMatchError):
    """Every grid point failed on every path."""


@dataclass(frozen=True)
class TuningObjective:
    """Closed-loop performance index over samples ``k = 0..N``.

    ``phi1 = q_z * sum (z_k - z_ref)^2`` and ``phi2`` adds
    ``q_du * sum (du_scale * (u_k - u_{k-1}))^2`` with ``u_{-1} = u_ref``.
    ``du_scale`` converts input moves from the model unit (L/s) to the unit
    in which ``q_du`` is expressed (L/min by default).
    """

    kind: str = "phi2"
    q_z: float = 1.0
    q_du: float = 5e3
    z_ref: float = None
    u_ref: float = None
    du_scale: float = 60.0

    def __post_init__(self):
        if self.kind not in ("phi1", "phi2"):
            raise ValueError(f"kind must be 'phi1' or 'phi2', got {self.kind!r}")
        check_scalar(self.q_z, "q_z", lo=0.0)
        check_scalar(self.q_du, "q_du", lo=0.0)
        check_scalar(self.du_scale, "du_scale", lo=0.0, strict_lo=True)

    @property
    def move_weight(self):
        """Weight on squared raw input moves; zero for ``phi1``."""
        return 0.0 if self.kind == "phi1" else self.q_du * self.du_scale**2

    def with_references(self, z_ref, u_ref):
        return TuningObjective(self.kind, self.q_z, self.q_du, z_ref, u_ref, self.du_scale)

    def from_sums(self, sum_e2, sum_du2):
        return self.q_z * np.asarray(sum_e2) + self.move_weight * np.asarray(sum_du2)


def evaluate_objective(record, obj):
    """Objective value of one :class:`~mcmatch.sde.SimRecord`."""
    if obj.z_ref is None or obj.u_ref is None:
        raise ValueError("objective needs z_ref and u_ref")
    e2 = float(np.sum((record.z - obj.z_ref) ** 2))
    du = np.diff(np.concatenate([[obj.u_ref], record.u]))
    return float(obj.from_sums(e2, float(np.sum(du * du))))


@dataclass(frozen=True)
class GridSpec:
    """Equidistant grid for one gain.

    ``init`` is ``"operating"`` (start at the steady state) or ``"far"``
    (start on the reaction manifold at ``far_temperature``, 30 degC by
    default, which saturates the input).
    """

    name: str
    lo: float = None
    hi: float = None
    count: int = 100
    paths: int = 10_000
    init: str = "operating"
    far_temperature: float = reactor.celsius_to_kelvin(30.0)

    def __post_init__(self):
        if self.name not in GAIN_NAMES:
            raise ValueError(f"unknown gain {self.name!r}")
        lo, hi = DEFAULT_RANGES[self.name]
        object.__setattr__(self, "lo", lo if self.lo is None else self.lo)
        object.__setattr__(self, "hi", hi if self.hi is None else self.hi)
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        check_scalar(self.count, "count", lo=2, integral=True)
        check_scalar(self.paths, "paths", lo=1, integral=True)
        if self.init not in ("operating", "far"):
            raise ValueError("init must be 'operating' or 'far'")

    @property
    def values(self):
        return np.linspace(self.lo, self.hi, self.count)


@dataclass
class TuningCurve:
    """Mean objective (failed paths at the penalty) and its standard error per grid value."""

    name: str
    values: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_failed: np.ndarray
    best: float
    best_index: int
    incumbent: float = None
    incumbent_mean: float = None

    def is_interior(self):
        return 0 < self.best_index < self.values.size - 1

    def to_csv(self, path):
        np.savetxt(
            path,
            np.column_stack([self.values, self.mean, self.stderr, self.n_failed]),
            delimiter=",",
            header="gain,mean,stderr,n_failed",
            comments="",
            fmt="%.17g",
        )

    @classmethod
    def from_csv(cls, path, name):
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        i = _argmin_tiebreak(d[:, 1], d[:, 0])
        return cls(name, d[:, 0], d[:, 1], d[:, 2], d[:, 3].astype(int), float(d[i, 0]), i)


def _argmin_tiebreak(mean, values):
    """Index of the smallest mean; among equal means, the smallest ``|gain|``."""
    best = np.min(mean)
    ties = np.flatnonzero(mean <= best + 1e-12 * max(1.0, abs(best)))
    return int(ties[np.argmin(np.abs(values[ties]))])


def initial_state(grid, params, gains):
    if grid.init == "far":
        return reactor.manifold_state(grid.far_temperature, params)
    return reactor.manifold_state(gains.y_bar, params)


def _score(params, gains, kp, ki, kaw, config, paths, obj, chunk, noise_cache):
    """Per-gain sums of objective and squared objective, and failure counts."""
    n_g = np.size(kp)
    tot = np.zeros(n_g)
    tot2 = np.zeros(n_g)
    fails = np.zeros(n_g, dtype=np.int64)
    for start in range(0, paths.size, chunk):
        sub = paths[start : start + chunk]
        key = (int(sub[0]), sub.size)
        noise = noise_cache.get(key) if noise_cache is not None else None
        if noise is None:
            noise = pi_noise(config, sub)
            if noise_cache is not None:
                noise_cache[key] = noise
        b = simulate_pi_batch(params, gains, kp, ki, kaw, config, sub, noise=noise)
        vals = obj.from_sums(b.sum_e2, b.sum_du2)
        vals = np.where(b.failed, PENALTY, vals)
        vals = b.per_gain(vals)
        tot += vals.sum(axis=1)
        tot2 += (vals * vals).sum(axis=1)
        fails += b.per_gain(b.failed).sum(axis=1)
    return tot, tot2, fails


def tune_gain(grid, base_gains, obj, params, config, crn=True, include_incumbent=True,
              chunk=1000, noise_cache=None):
    """Grid search for one gain with the other two held at ``base_gains``.

    Parameters
    ----------
    grid : GridSpec
    base_gains : PiGains
        Gains, targets and bounds in model units.
    obj : TuningObjective
        References default to ``base_gains.y_bar`` and ``base_gains.u_bar``.
    params : ReactorParameters
    config : SimConfig
        Time grid and seed; ``x0`` is replaced according to ``grid.init``.
    crn : bool
        Use the same paths for every grid point. Without it, grid point
        ``i`` uses paths ``i * grid.paths ...``.
    include_incumbent : bool
        Also score the current value of the gain on the same paths; it is
        returned instead of the grid argmin if strictly better, so a
        coordinate pass never worsens the objective on its own paths.

    Returns
    -------
    TuningCurve

    Raises
    ------
    TuningError
        If every path failed at every grid point.
    """
    obj = obj.with_references(
        base_gains.y_bar if obj.z_ref is None else obj.z_ref,
        base_gains.u_bar if obj.u_ref is None else obj.u_ref,
    )
    cfg = config.replace(x0=initial_state(grid, params, base_gains))
    values = grid.values
    base = {k: getattr(base_gains, k) for k in GAIN_NAMES}
    n = grid.paths
    cache = noise_cache

    def gains_for(vals):
        g = {k: np.full(vals.size, base[k]) for k in GAIN_NAMES}
        g[grid.name] = vals
        return g["kp"], g["ki"], g["kaw"]

    cand = np.append(values, base[grid.name]) if include_incumbent else values
    if crn:
        paths = np.arange(n, dtype=np.int64)
        tot, tot2, fails = _score(params, base_gains, *gains_for(cand), cfg, paths, obj, chunk, cache)
    else:
        parts = []
        for i, v in enumerate(cand):
            paths = np.arange(i * n, (i + 1) * n, dtype=np.int64)
            parts.append(_score(params, base_gains, *gains_for(np.array([v])), cfg, paths, obj, chunk, None))
        tot, tot2, fails = (np.concatenate(x) for x in zip(*parts))
    if np.all(fails[: values.size] == n):
        raise TuningError(f"all paths failed at every {grid.name} grid point")
    mean = tot / n
    var = np.maximum(tot2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    stderr = np.sqrt(var / n)

    k = values.size
    i = _argmin_tiebreak(mean[:k], values)
    best = float(values[i])
    inc, inc_mean = None, None
    if include_incumbent:
        inc, inc_mean = float(base[grid.name]), float(mean[k])
        if inc_mean < mean[i]:
            best = inc
    return TuningCurve(grid.name, values, mean[:k], stderr[:k], fails[:k], best, i, inc, inc_mean)


@dataclass
class TuningResult:
    gains: PiGains
    curves: dict = field(default_factory=dict)


def tune_pi(grids, base_gains, obj, params, config, crn=True, include_incumbent=True):
    """Coordinate tuning in the order ``kp``, ``ki``, ``kaw``.

    ``grids`` maps gain name to :class:`GridSpec`; each stage starts from the
    gains found by the previous one.
    """
    gains = base_gains
    curves = {}
    for name in GAIN_NAMES:
        if name not in grids:
            raise ValueError(f"missing grid for {name}")
        curve = tune_gain(grids[name], gains, obj, params, config, crn=crn,
                          include_incumbent=include_incumbent)
        curves[name] = curve
        gains = gains.replace(**{name: curve.best})
    return TuningResult(gains, curves)


def default_grids(count=100, paths=10_000):
    return {
        "kp": GridSpec("kp", count=count, paths=paths),
        "ki": GridSpec("ki", count=count, paths=paths),
        "kaw": GridSpec("kaw", count=count, paths=paths, init="far"),
    }


class MonteCarloTuner(BaseEstimator):
    """Estimator front end for :func:`tune_pi`.

    ``fit(params, base_gains)`` runs the three coordinate stages and stores
    ``gains_`` and ``curves_``. Ranges are ``(lo, hi)`` pairs; ``None``
    selects the defaults.
    """

    def __init__(self, objective="phi2", q_z=1.0, q_du=5e3, du_scale=60.0, count=100, paths=10_000,
                 kp_range=None, ki_range=None, kaw_range=None, far_temperature=None, seed=0,
                 crn=True, config=None):
        self.objective = objective
        self.q_z = q_z
        self.q_du = q_du
        self.du_scale = du_scale
        self.count = count
        self.paths = paths
        self.kp_range = kp_range
        self.ki_range = ki_range
        self.kaw_range = kaw_range
        self.far_temperature = far_temperature
        self.seed = seed
        self.crn = crn
        self.config = config

    def _grids(self):
        out = {}
        for name, rng in (("kp", self.kp_range), ("ki", self.ki_range), ("kaw", self.kaw_range)):
            lo, hi = DEFAULT_RANGES[name] if rng is None else rng
            kw = dict(lo=lo, hi=hi, count=self.count, paths=self.paths)
            if name == "kaw":
                kw["init"] = "far"
                if self.far_temperature is not None:
                    kw["far_temperature"] = self.far_temperature
            out[name] = GridSpec(name, **kw)
        return out

    def fit(self, params, base_gains):
        from .sde import SimConfig

        cfg = self.config if self.config is not None else SimConfig(ts=base_gains.ts)
        cfg = cfg.replace(seed=self.seed)
        obj = TuningObjective(self.objective, self.q_z, self.q_du, du_scale=self.du_scale)
        res = tune_pi(self._grids(), base_gains, obj, params, cfg, crn=self.crn)
        self.gains_ = res.gains
        self.curves_ = res.curves
        return self
