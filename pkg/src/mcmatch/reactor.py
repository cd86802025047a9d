"""Adiabatic CSTR with the exothermic reaction A + 2B -> C.

Units inside the library: flows in L/s, temperatures in K, amounts in mol,
and the temperature "amount" ``n_T = V c_T`` in K L. Configuration files and
CSV outputs use mL/min and degC; the helpers below convert.
"""

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import brentq

from ._validation import as_matrix, check_scalar
from .exceptions import ConvergenceError, DivergenceError, DomainError
from .numerics.expm import discretize_zoh

ZERO_CELSIUS = 273.15
ML_MIN_PER_L_S = 60_000.0


def ml_min_to_l_s(f):
    return np.asarray(f, dtype=float) / ML_MIN_PER_L_S if np.ndim(f) else f / ML_MIN_PER_L_S


def l_s_to_ml_min(f):
    return np.asarray(f, dtype=float) * ML_MIN_PER_L_S if np.ndim(f) else f * ML_MIN_PER_L_S


def celsius_to_kelvin(t):
    return t + ZERO_CELSIUS


def kelvin_to_celsius(t):
    return t - ZERO_CELSIUS


@dataclass(frozen=True)
class ReactorParameters:
    """Physical constants of the CSTR.

    The defaults are the calibrated set: literature kinetics with ``k0`` and
    ``beta`` adjusted so that the upper steady state at 630 mL/min sits at
    59.30 degC and the 1 s discretization of the one-state model has
    ``A = 0.9572``. :meth:`literature` returns the unadjusted values.
    """

    k0: float = 48287386925.49032  # L/(mol s)
    ea_over_r: float = 8500.0  # K
    beta: float = 133.76662758746292  # K L/mol
    volume: float = 0.105  # L
    cain: float = 0.8  # mol/L
    cbin: float = 1.2  # mol/L
    ctin: float = 273.65  # K
    sigma_t: float = 5.0  # K s^0.5
    rv: float = 0.1  # K^2
    f_min: float = 0.0  # mL/min
    f_max: float = 1000.0  # mL/min
    ts: float = 1.0  # s

    def __post_init__(self):
        for f in fields(self):
            check_scalar(getattr(self, f.name), f.name)
        if self.volume <= 0:
            raise ValueError("volume must be positive")
        if self.k0 < 0:
            raise ValueError("k0 must be nonnegative")
        if self.ea_over_r < 0:
            raise ValueError("ea_over_r must be nonnegative")
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be below f_max")
        if self.sigma_t < 0 or self.rv < 0:
            raise ValueError("noise intensities must be nonnegative")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if self.beta == 0:
            raise ValueError("beta must be nonzero")

    @classmethod
    def literature(cls):
        """Uncalibrated kinetics: ``k0 = exp(24.6)``, ``-dH/(rho cP) = 560/4.186``."""
        return cls(k0=float(np.exp(24.6)), beta=560.0 / 4.186)

    @property
    def stoich_row(self):
        return np.array([-1.0, -2.0, self.beta])

    @property
    def c_in(self):
        return np.array([self.cain, self.cbin, self.ctin])

    @property
    def u_bounds(self):
        """Input bounds in L/s."""
        return ml_min_to_l_s(self.f_min), ml_min_to_l_s(self.f_max)

    @property
    def t_max(self):
        """Highest temperature on the reaction manifold (limiting reagent used up)."""
        return self.ctin + self.beta * min(self.cain, self.cbin / 2.0)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return replace(self, **changes)

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path):
        data = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown reactor parameter keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


def arrhenius(c_t, params):
    """Rate constant ``k0 exp(-(Ea/R) / c_T)``."""
    c_t = np.asarray(c_t, dtype=float)
    if np.any(~(c_t > 0)):
        raise DomainError("temperature must be positive")
    k = params.k0 * np.exp(-params.ea_over_r / c_t)
    return float(k) if k.ndim == 0 else k


def manifold_concentrations(c_t, params):
    """Concentrations of A and B consistent with temperature on the one-state manifold."""
    dt = params.ctin - np.asarray(c_t, dtype=float)
    return params.cain + dt / params.beta, params.cbin + 2.0 * dt / params.beta


def manifold_state(c_t, params):
    """Three-state amounts ``[n_A, n_B, n_T]`` on the manifold at temperature ``c_t``."""
    c_a, c_b = manifold_concentrations(c_t, params)
    return params.volume * np.array([c_a, c_b, c_t], dtype=float)


def drift3(n, flow, params):
    """Right-hand side ``C_in F - c F + S' r(c) V`` of the three-state model.

    ``n`` has shape ``(3,)`` or ``(3, L)`` for ``L`` independent lanes;
    ``flow`` is in L/s and broadcasts against the lanes. Negative
    concentrations are clamped to zero inside the rate only.
    """
    n = np.asarray(n, dtype=float)
    if not np.all(np.isfinite(n)):
        raise DivergenceError("non-finite reactor state", x=n, u=flow)
    v = params.volume
    c = n / v
    rate = (
        params.k0
        * np.exp(-params.ea_over_r / c[2])
        * np.maximum(c[0], 0.0)
        * np.maximum(c[1], 0.0)
    )
    c_in = params.c_in.reshape((3,) + (1,) * (n.ndim - 1))
    s = params.stoich_row.reshape(c_in.shape)
    return c_in * flow - c * flow + s * rate * v


def drift1(n_t, flow, params):
    """Right-hand side of the one-state temperature model (K L / s)."""
    n_t = np.asarray(n_t, dtype=float)
    if not np.all(np.isfinite(n_t)):
        raise DivergenceError("non-finite reactor state", x=n_t, u=flow)
    v = params.volume
    c_t = n_t / v
    c_a, c_b = manifold_concentrations(c_t, params)
    rate = (
        params.k0
        * np.exp(-params.ea_over_r / c_t)
        * np.maximum(c_a, 0.0)
        * np.maximum(c_b, 0.0)
    )
    out = params.ctin * flow - c_t * flow + params.beta * rate * v
    return float(out) if np.ndim(out) == 0 else out


def _drift1_dct(c_t, flow, params):
    """Derivative of the one-state drift with respect to temperature."""
    c_a, c_b = manifold_concentrations(c_t, params)
    k = params.k0 * np.exp(-params.ea_over_r / c_t)
    dk = k * params.ea_over_r / c_t**2
    ca, cb = max(c_a, 0.0), max(c_b, 0.0)
    dca = -1.0 / params.beta if c_a > -1e-12 else 0.0
    dcb = -2.0 / params.beta if c_b > -1e-12 else 0.0
    d_rate = dk * ca * cb + k * (dca * cb + ca * dcb)
    return -flow + params.beta * d_rate * params.volume


def _check_flow(flow, params):
    lo, hi = params.u_bounds
    if not lo - 1e-15 <= flow <= hi + 1e-15:
        raise ValueError(
            f"flow {l_s_to_ml_min(flow):.6g} mL/min outside "
            f"[{params.f_min}, {params.f_max}]"
        )


def steady_states(flow, params, grid=4000):
    """All steady-state temperatures (K) at ``flow`` (L/s), ascending.

    Roots are bracketed on a temperature grid spanning the physical range
    ``[c_T,in, t_max]`` and refined by Brent's method then Newton.
    """
    _check_flow(flow, params)
    v = params.volume
    lo, hi = params.ctin, params.t_max
    if hi <= lo:
        hi = lo + 1.0

    def f(c_t):
        return drift1(c_t * v, flow, params)

    temps = np.linspace(lo, hi, grid + 1)
    vals = f(temps)
    roots = []
    for i in range(grid):
        if vals[i] == 0.0:
            roots.append(temps[i])
        elif vals[i] * vals[i + 1] < 0:
            roots.append(brentq(f, temps[i], temps[i + 1], xtol=1e-13, rtol=1e-15))
    # at zero flow the only equilibrium is complete conversion at t_max
    if abs(vals[-1]) <= 1e-12 and not (roots and roots[-1] == temps[-1]):
        roots.append(temps[-1])
    polished = []
    for r in roots:
        for _ in range(3):
            slope = _drift1_dct(r, flow, params)
            if slope == 0:
                break
            step = f(r) / slope
            if abs(step) > 1e-6:
                break
            r -= step
        polished.append(r)
    return np.array(polished)


def steady_state(flow, params, branch_hint):
    """Steady-state ``n_T`` at ``flow`` (L/s) on the branch nearest ``branch_hint`` (K).

    Raises
    ------
    ConvergenceError
        If no root exists or the residual exceeds ``1e-9``.
    """
    roots = steady_states(flow, params)
    if roots.size == 0:
        raise ConvergenceError("no steady state found", residual=None)
    c_t = roots[np.argmin(np.abs(roots - branch_hint))]
    n_t = c_t * params.volume
    res = abs(drift1(n_t, flow, params))
    if res > 1e-9:
        raise ConvergenceError(f"steady-state residual {res:.3e}", residual=res)
    return n_t


def is_stable(n_t, flow, params):
    """Local stability of a one-state equilibrium."""
    return _drift1_dct(n_t / params.volume, flow, params) / params.volume < 0


def linearize(x_s, u_s, params):
    """Jacobians ``(A_c, B_c)`` of the one-state model at ``(n_T, F)``.

    Requires ``|drift1(x_s, u_s)| <= 1e-6``.
    """
    res = drift1(x_s, u_s, params)
    if abs(res) > 1e-6:
        raise ValueError(f"({x_s}, {u_s}) is not a steady state (residual {res:.3e})")
    c_t = x_s / params.volume
    a_c = _drift1_dct(c_t, u_s, params) / params.volume
    b_c = params.ctin - c_t
    return np.array([[a_c]]), np.array([[b_c]])


@dataclass(frozen=True)
class StateSpace:
    """Discrete linear model in deviation variables around ``(x_s, u_s, y_s)``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    cz: np.ndarray
    ts: float
    x_s: np.ndarray = None
    u_s: np.ndarray = None
    y_s: np.ndarray = None

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("a must be square")
        b = as_matrix(self.b, "b", shape=(n, None))
        c = as_matrix(self.c, "c", shape=(None, n))
        cz = as_matrix(self.cz, "cz", shape=(None, n))
        check_scalar(self.ts, "ts", lo=0.0, strict_lo=True)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "cz", cz)
        for name, size in (("x_s", n), ("u_s", b.shape[1]), ("y_s", c.shape[0])):
            val = getattr(self, name)
            val = np.zeros(size) if val is None else np.asarray(val, dtype=float).reshape(size)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    def to_deviation(self, x):
        return np.asarray(x, dtype=float) - self.x_s

    def from_deviation(self, dx):
        return np.asarray(dx, dtype=float) + self.x_s


def discretize(a_c, b_c, ts, c=None, cz=None, x_s=None, u_s=None, y_s=None):
    """Exact zero-order-hold discretization of ``(a_c, b_c)`` with sample time ``ts``."""
    a, b = discretize_zoh(a_c, b_c, ts)
    n = a.shape[0]
    c = np.eye(n) if c is None else c
    cz = c if cz is None else cz
    return StateSpace(a, b, c, cz, ts, x_s=x_s, u_s=u_s, y_s=y_s)


def cstr_state_space(params, flow=None, branch_hint=None, ts=None):
    """Linear discrete one-state model at the operating point.

    Defaults: 630 mL/min and the branch nearest 59.30 degC; ``C = C_z = 1/V``.
    """
    flow = ml_min_to_l_s(630.0) if flow is None else flow
    branch_hint = celsius_to_kelvin(59.30) if branch_hint is None else branch_hint
    ts = params.ts if ts is None else ts
    n_t = steady_state(flow, params, branch_hint)
    a_c, b_c = linearize(n_t, flow, params)
    c = np.array([[1.0 / params.volume]])
    return discretize(a_c, b_c, ts, c=c, cz=c, x_s=[n_t], u_s=[flow], y_s=[n_t / params.volume])


def calibrate(
    params,
    target_temperature=celsius_to_kelvin(59.30),
    target_a=0.9572,
    flow=None,
    tol=1e-12,
    max_iter=50,
):
    """Adjust ``k0`` and ``beta`` to hit the operating temperature and pole.

    Newton's method on ``(log k0, beta)`` for the residuals
    ``T_ss(flow) - target_temperature`` and ``A(ts) - target_a`` with a
    finite-difference Jacobian. ``ea_over_r`` stays fixed.

    Returns
    -------
    params : ReactorParameters
    residuals : tuple of float
    """
    flow = ml_min_to_l_s(630.0) if flow is None else flow

    def residuals(z):
        p = params.replace(k0=float(np.exp(z[0])), beta=float(z[1]))
        n_t = steady_state(flow, p, target_temperature)
        ss = cstr_state_space(p, flow, target_temperature)
        return np.array([n_t / p.volume - target_temperature, ss.a[0, 0] - target_a])

    z = np.array([np.log(params.k0), params.beta])
    r = residuals(z)
    for _ in range(max_iter):
        if abs(r[0]) < tol * target_temperature and abs(r[1]) < tol:
            break
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-6 * max(1.0, abs(z[j]))
            dz = np.zeros(2)
            dz[j] = h
            jac[:, j] = (residuals(z + dz) - residuals(z - dz)) / (2 * h)
        step = np.linalg.solve(jac, -r)
        lam = 1.0
        while lam > 1e-4:
            try:
                r_new = residuals(z + lam * step)
            except ConvergenceError:
                r_new = None
            if r_new is not None and np.linalg.norm(r_new / [1.0, 0.01]) < np.linalg.norm(r / [1.0, 0.01]):
                break
            lam *= 0.5
        else:
            raise ConvergenceError("calibration line search failed", residual=r)
        z = z + lam * step
        r = r_new
    else:
        raise ConvergenceError("calibration did not converge", residual=r)
    return params.replace(k0=float(np.exp(z[0])), beta=float(z[1])), (float(r[0]), float(r[1]))


def steady_sweep(flows, params):
    """Steady states over a flow grid (L/s).

    Returns a list of ``(flow, temperature_K, stable)`` rows; flows with
    several equilibria produce several rows.
    """
    rows = []
    for f in np.atleast_1d(np.asarray(flows, dtype=float)):
        for t in steady_states(f, params):
            rows.append((float(f), float(t), bool(is_stable(t * params.volume, f, params))))
    return rows
