"""Experiment configuration, derived objects and output bookkeeping.

An experiment is a YAML file with the sections below; every key is
optional and missing keys take the defaults shown. Temperatures are in degC
and flows in mL/min here; PI gains are in model units, L/s per K (and per
K s for ``ki``).

.. code-block:: yaml

    reactor: null            # path to a parameter file; null = built-in calibrated set
    operating_point: {flow: 630.0, temperature: 59.30, t_min: 57.26}
    sim: {t0: 0.0, tf: 300.0, ts: 1.0, substeps: 10, seed: 0, n_paths: 100}
    pi: {kp: -5.0e-4, ki: -5.0e-4, kaw: 0.1}
    mpc: {horizon: 50, z_min: 59.0, z_max: null, cost: null,
          q_eps_l: 1.0e6, q_eps_u: 1.0e6, l_eps_l: 1.0e6, l_eps_u: 1.0e6}
    objective: {kind: phi2, q_z: 1.0, q_du: 5000.0, du_scale: 60.0}
    tuning: {count: 100, paths: 10000, crn: true, far_temperature: 30.0,
             kp_range: [-5.0e-3, -1.0e-5], ki_range: [-1.0e-3, -1.0e-6],
             kaw_range: [0.0, 1.0]}
    out: results
"""

import copy
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, reactor
from .matching import StageCost, build_augmented, match
from .pi import PiGains
from .sde import SimConfig
from .tuning import GridSpec, TuningObjective

DEFAULTS = {
    "reactor": None,
    "operating_point": {"flow": 630.0, "temperature": 59.30, "t_min": 57.26},
    "sim": {"t0": 0.0, "tf": 300.0, "ts": 1.0, "substeps": 10, "seed": 0, "n_paths": 100},
    "pi": {"kp": -5.0e-4, "ki": -5.0e-4, "kaw": 0.1},
    "mpc": {
        "horizon": 50,
        "z_min": 59.0,
        "z_max": None,
        "cost": None,
        "q_eps_l": 1.0e6,
        "q_eps_u": 1.0e6,
        "l_eps_l": 1.0e6,
        "l_eps_u": 1.0e6,
    },
    "objective": {"kind": "phi2", "q_z": 1.0, "q_du": 5.0e3, "du_scale": 60.0},
    "tuning": {
        "count": 100,
        "paths": 10_000,
        "crn": True,
        "far_temperature": 30.0,
        "kp_range": [-5.0e-3, -1.0e-5],
        "ki_range": [-1.0e-3, -1.0e-6],
        "kaw_range": [0.0, 1.0],
    },
    "out": "results",
}


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if k not in base:
            raise ValueError(f"unknown config key '{where}{k}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ValueError(f"config key '{where}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment settings; see the module docstring for the layout."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        self._params = self._load_params()
        self._plant = None
        self.sim_config()
        self.gains()
        self.objective()
        if self.data["sim"]["n_paths"] < 1:
            raise ValueError("sim.n_paths must be at least 1")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        return cls(yaml.safe_load(path.read_text()) or {}, base_dir=path.parent)

    def resolve(self, ref):
        p = Path(ref)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def params(self):
        return self._params

    def _load_params(self):
        ref = self.data["reactor"]
        if ref is None:
            return reactor.ReactorParameters()
        path = self.resolve(ref)
        if not path.exists():
            raise FileNotFoundError(f"reactor parameter file {path} does not exist")
        return reactor.ReactorParameters.load(path)

    def plant(self):
        """Linear discrete model at the configured operating point (cached)."""
        if self._plant is None:
            op = self.data["operating_point"]
            self._plant = reactor.cstr_state_space(
                self.params,
                flow=reactor.ml_min_to_l_s(op["flow"]),
                branch_hint=reactor.celsius_to_kelvin(op["temperature"]),
                ts=float(self.data["sim"]["ts"]),
            )
        return self._plant

    def gains(self, overrides=None):
        """PI design at the operating point; ``overrides`` replaces kp/ki/kaw."""
        ss = self.plant()
        params = self.params
        g = dict(self.data["pi"])
        g.update(overrides or {})
        lo, hi = params.u_bounds
        return PiGains(
            kp=float(g["kp"]), ki=float(g["ki"]), kaw=float(g["kaw"]),
            u_min=lo, u_max=hi, u_bar=float(ss.u_s[0]), y_bar=float(ss.y_s[0]),
            ts=float(self.data["sim"]["ts"]),
        )

    def sim_config(self, seed=None):
        s = self.data["sim"]
        ss = self.plant()
        x0 = reactor.manifold_state(float(ss.y_s[0]), self.params)
        return SimConfig(
            t0=float(s["t0"]), tf=float(s["tf"]), ts=float(s["ts"]), substeps=int(s["substeps"]),
            seed=int(s["seed"] if seed is None else seed), x0=x0,
        )

    @property
    def n_paths(self):
        return int(self.data["sim"]["n_paths"])

    def objective(self, kind=None):
        o = self.data["objective"]
        return TuningObjective(
            kind=kind or o["kind"], q_z=float(o["q_z"]), q_du=float(o["q_du"]),
            du_scale=float(o["du_scale"]),
        )

    def grids(self, paths=None):
        t = self.data["tuning"]
        n = int(t["paths"] if paths is None else paths)
        far = reactor.celsius_to_kelvin(float(t["far_temperature"]))
        return {
            name: GridSpec(
                name, lo=float(t[f"{name}_range"][0]), hi=float(t[f"{name}_range"][1]),
                count=int(t["count"]), paths=n, init="far" if name == "kaw" else "operating",
                far_temperature=far,
            )
            for name in ("kp", "ki", "kaw")
        }

    def soft_weights(self):
        m = self.data["mpc"]
        return {k: float(m[k]) for k in ("q_eps_l", "q_eps_u", "l_eps_l", "l_eps_u")}

    def z_bounds(self):
        """Absolute soft output bounds in K (``None`` when absent)."""
        m = self.data["mpc"]
        conv = lambda v: None if v is None else reactor.celsius_to_kelvin(float(v))  # noqa: E731
        return conv(m["z_min"]), conv(m["z_max"])

    def stage_cost(self, gains):
        """The configured cost file, or a fresh match of ``gains``."""
        ref = self.data["mpc"]["cost"]
        if ref is not None:
            return StageCost.load(self.resolve(ref))
        return match(build_augmented(self.plant(), gains), **self.soft_weights())

    @property
    def t_min(self):
        """Critical lower temperature (K), reported alongside the soft bound."""
        return reactor.celsius_to_kelvin(float(self.data["operating_point"]["t_min"]))

    def to_dict(self):
        return copy.deepcopy(self.data)

    def digest(self):
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def save_gains(gains, path):
    Path(path).write_text(yaml.safe_dump({"kp": gains.kp, "ki": gains.ki, "kaw": gains.kaw}))


def load_gains(path):
    d = yaml.safe_load(Path(path).read_text()) or {}
    unknown = set(d) - {"kp", "ki", "kaw"}
    if unknown or len(d) != 3:
        raise ValueError(f"{path}: expected exactly the keys kp, ki, kaw")
    return {k: float(v) for k, v in d.items()}


def versions():
    import numba
    import scipy
    import sklearn

    return {
        "mcmatch": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "scikit-learn": sklearn.__version__,
    }


def write_manifest(out_dir, command, config, seeds, extra=None):
    """Record what produced the contents of ``out_dir``."""
    manifest = {
        "command": command,
        "config_sha256": config.digest(),
        "config": config.to_dict(),
        "versions": versions(),
        "seeds": seeds,
    }
    if extra:
        manifest.update(extra)
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
    return manifest
