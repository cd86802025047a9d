"""MPC stage-cost design by matching a linear feedback.

Given a model ``x+ = A x + B u`` and a stabilizing gain ``u = -K x``, the
matching program picks ``Gamma`` and ``P`` such that the stage cost::

    [x; u]' [[Q, S'], [S, R]] [x; u]
        = (u + K x)' Gamma (u + K x) + x' P x - (A x + B u)' P (A x + B u)

is positive definite. Summed along any trajectory with terminal cost
``x_N' P x_N``, the ``P`` terms telescope, so the unconstrained finite-horizon
optimum is ``u = -K x`` at every horizon. The PI controller becomes such a
gain after appending its integrator to the plant state.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml
from sklearn.base import BaseEstimator

from ._validation import as_matrix, check_scalar, check_symmetric
from .exceptions import ConvergenceError, NotStabilizingError
from .numerics import LmiProblem, solve_lmi, sym_eig


@dataclass(frozen=True)
class AugmentedPlant:
    """Plant plus PI integrator, ``x~ = [x; I_{k-1}]``, in deviation variables.

    ``a_tilde = a_hat + a_aw`` and ``b_tilde = b_hat + b_aw`` include the
    anti-windup correction; ``k_hat = k_p_hat + k_i_hat`` reproduces the PI
    law as ``u - u_bar = -k_hat x~`` while the input is not clipped.
    """

    a_hat: np.ndarray
    b_hat: np.ndarray
    k_p_hat: np.ndarray
    k_i_hat: np.ndarray
    a_aw: np.ndarray
    b_aw: np.ndarray
    cz: np.ndarray
    ts: float

    @property
    def k_hat(self):
        return self.k_p_hat + self.k_i_hat

    @property
    def a_tilde(self):
        return self.a_hat + self.a_aw

    @property
    def b_tilde(self):
        return self.b_hat + self.b_aw

    @property
    def n(self):
        return self.a_hat.shape[0]

    def model(self, anti_windup=True):
        """Prediction pair ``(A, B)``: ``(a_tilde, b_tilde)`` or ``(a_hat, b_hat)``."""
        return (self.a_tilde, self.b_tilde) if anti_windup else (self.a_hat, self.b_hat)

    def closed_loop(self):
        return self.a_tilde - self.b_tilde @ self.k_hat

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop()))))


def build_augmented(plant, gains):
    """Augment a single-input, single-output ``StateSpace`` with the PI integrator.

    ``gains`` must be expressed in the plant's input and output units.
    """
    if plant.m != 1 or plant.c.shape[0] != 1:
        raise ValueError("PI augmentation needs a single-input, single-output plant")
    if abs(plant.ts - gains.ts) > 1e-12 * max(1.0, plant.ts):
        raise ValueError(f"plant ts={plant.ts} differs from controller ts={gains.ts}")
    n = plant.n
    ts = gains.ts
    c = plant.c
    a_hat = np.block([[plant.a, np.zeros((n, 1))], [-ts * gains.ki * c, np.ones((1, 1))]])
    b_hat = np.vstack([plant.b, np.zeros((1, 1))])
    k_p_hat = np.hstack([gains.kp * c, np.zeros((1, 1))])
    k_i_hat = np.hstack([ts * gains.ki * c, -np.ones((1, 1))])
    k_hat = k_p_hat + k_i_hat
    a_aw = np.vstack([np.zeros((n, n + 1)), ts * gains.kaw * k_hat])
    b_aw = np.vstack([np.zeros((n, 1)), [[ts * gains.kaw]]])
    cz = np.hstack([plant.cz, np.zeros((plant.cz.shape[0], 1))])
    return AugmentedPlant(a_hat, b_hat, k_p_hat, k_i_hat, a_aw, b_aw, cz, ts)


def simulate_linear_law(aug, x0, steps):
    """Iterate ``x~+ = A~ x~ + B~ u`` with ``u = -K^ x~``.

    Returns
    -------
    x : ndarray, shape (steps + 1, n)
    u : ndarray, shape (steps, 1)
    """
    x = np.empty((steps + 1, aug.n))
    u = np.empty((steps, aug.k_hat.shape[0]))
    x[0] = np.asarray(x0, dtype=float).ravel()
    a, b, k = aug.a_tilde, aug.b_tilde, aug.k_hat
    for i in range(steps):
        u[i] = -k @ x[i]
        x[i + 1] = a @ x[i] + b @ u[i]
    return x, u


@dataclass(frozen=True)
class StageCost:
    """Quadratic MPC cost with soft-constraint penalties.

    The stage cost is ``x'Qx + 2u'Sx + u'Ru`` and the terminal cost
    ``x'Px``. Each slack ``eps`` adds ``q_eps * eps^2 + l_eps * eps``. When
    produced by matching, ``gamma`` and ``beta`` hold the program's solution.
    """

    q: np.ndarray
    r: np.ndarray
    s: np.ndarray
    p: np.ndarray
    q_eps_l: float = 1e6
    q_eps_u: float = 1e6
    l_eps_l: float = 1e6
    l_eps_u: float = 1e6
    gamma: np.ndarray = None
    beta: float = None
    anti_windup: bool = True

    def __post_init__(self):
        q = check_symmetric(self.q, "q")
        n = q.shape[0]
        r = check_symmetric(self.r, "r")
        m = r.shape[0]
        s = as_matrix(self.s, "s", shape=(m, n))
        p = check_symmetric(self.p, "p")
        if p.shape != (n, n):
            raise ValueError(f"p has shape {p.shape}, expected {(n, n)}")
        for name in ("q_eps_l", "q_eps_u", "l_eps_l", "l_eps_u"):
            check_scalar(getattr(self, name), name, lo=0.0)
        if m and sym_eig(r)[0][0] <= 1e-10:
            raise ValueError("r must be positive definite")
        if n and sym_eig(p)[0][0] < -1e-8 * max(1.0, np.abs(p).max()):
            raise ValueError("p must be positive semidefinite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", p)
        if self.gamma is not None:
            object.__setattr__(self, "gamma", as_matrix(self.gamma, "gamma"))

    @property
    def weight(self):
        """The joint stage weight ``[[Q, S'], [S, R]]``."""
        return np.block([[self.q, self.s.T], [self.s, self.r]])

    def with_soft_weights(self, q_eps_l=None, q_eps_u=None, l_eps_l=None, l_eps_u=None):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in dict(q_eps_l=q_eps_l, q_eps_u=q_eps_u, l_eps_l=l_eps_l, l_eps_u=l_eps_u).items():
            if v is not None:
                d[k] = v
        return StageCost(**d)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown stage-cost keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path):
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def recover_cost(a, b, k_hat, gamma, p, **soft):
    """Stage cost induced by ``(Gamma, P)`` for the gain ``k_hat``."""
    q = k_hat.T @ gamma @ k_hat + p - a.T @ p @ a
    r = gamma - b.T @ p @ b
    s = gamma @ k_hat - b.T @ p @ a
    return StageCost(q=q, r=r, s=s, p=p, gamma=gamma, **soft)


def match_gain(a, b, k_hat, tol=1e-7, **soft):
    """Match the feedback ``u = -k_hat x`` for the model ``(a, b)``.

    Returns the :class:`StageCost` and the raw :class:`LmiSolution`.

    Raises
    ------
    NotStabilizingError
        If ``k_hat`` does not stabilize ``(a, b)``.
    """
    prob = LmiProblem(a, b, k_hat)
    sol = solve_lmi(prob, tol=tol)
    cost = recover_cost(prob.a, prob.b, prob.k_hat, sol.gamma, sol.p, beta=sol.beta, **soft)
    return cost, sol


def match(aug, tol=1e-7, anti_windup=True, **soft):
    """Stage cost reproducing the PI law of ``aug`` as unconstrained MPC.

    ``anti_windup`` selects the prediction model (see
    :meth:`AugmentedPlant.model`); the recorded flag tells the MPC which
    pair to predict with. Extra keyword arguments set the soft-constraint
    weights.
    """
    a, b = aug.model(anti_windup)
    try:
        cost, _ = match_gain(a, b, aug.k_hat, tol=tol, anti_windup=anti_windup, **soft)
    except NotStabilizingError as exc:
        raise NotStabilizingError(f"gain does not stabilize model: {exc}") from exc
    return cost


def mpc_feedback(cost, a, b, horizon):
    """First-stage gain of the unconstrained horizon-``N`` problem.

    Backward Riccati recursion with the cross term ``S`` starting from the
    terminal weight ``P``; returns ``K`` with ``u_0 = -K x_0``.
    """
    check_scalar(horizon, "horizon", lo=1, integral=True)
    p = cost.p
    for _ in range(horizon):
        bp = b.T @ p
        lhs = cost.r + bp @ b
        rhs = cost.s + bp @ a
        try:
            k = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("Riccati recursion hit a singular input weight") from exc
        p = cost.q + a.T @ p @ a - rhs.T @ k
        p = 0.5 * (p + p.T)
        if not np.all(np.isfinite(p)):
            raise ConvergenceError("Riccati recursion diverged")
    return k


def mpc_feedback_of(cost, aug, horizon):
    a, b = aug.model(cost.anti_windup)
    return mpc_feedback(cost, a, b, horizon)


class ControllerMatcher(BaseEstimator):
    """Estimator wrapper around :func:`match_gain`.

    ``fit`` takes either an :class:`AugmentedPlant` or an ``(a, b, k_hat)``
    triple; afterwards ``cost_`` holds the matched :class:`StageCost`,
    ``beta_`` the optimal condition bound and ``certificate_`` the
    eigenvalue certificate. ``predict(x)`` applies the unconstrained MPC law
    of horizon ``horizon`` to the rows of ``x``.
    """

    def __init__(self, tol=1e-7, anti_windup=True, horizon=50, q_eps_l=1e6, q_eps_u=1e6,
                 l_eps_l=1e6, l_eps_u=1e6):
        self.tol = tol
        self.anti_windup = anti_windup
        self.horizon = horizon
        self.q_eps_l = q_eps_l
        self.q_eps_u = q_eps_u
        self.l_eps_l = l_eps_l
        self.l_eps_u = l_eps_u

    def fit(self, system, y=None):
        if isinstance(system, AugmentedPlant):
            a, b = system.model(self.anti_windup)
            k_hat = system.k_hat
        else:
            a, b, k_hat = system
        soft = dict(q_eps_l=self.q_eps_l, q_eps_u=self.q_eps_u, l_eps_l=self.l_eps_l,
                    l_eps_u=self.l_eps_u, anti_windup=self.anti_windup)
        self.cost_, sol = match_gain(a, b, k_hat, tol=self.tol, **soft)
        prob = LmiProblem(a, b, k_hat)
        self.a_, self.b_ = prob.a, prob.b
        self.beta_ = sol.beta
        self.certificate_ = sol.certificate
        self.gain_ = mpc_feedback(self.cost_, self.a_, self.b_, self.horizon)
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -x @ self.gain_.T
