"""Linear MPC with hard input bounds and soft output bounds.

The optimal control problem over horizon ``N`` is condensed into a dense QP
in the decision vector ``(u_0..u_{N-1}, eps_l_0..eps_l_N, eps_u_0..eps_u_N)``
by eliminating the states through the prediction model. A slack block is
omitted when the corresponding output bound is absent.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_matrix, check_scalar
from .exceptions import McMatchError
from .matching import build_augmented
from .numerics import DenseQp, solve_qp


def _stage_array(v, length, name, default):
    if v is None:
        return np.full(length, default, dtype=float)
    arr = np.asarray(v, dtype=float)
    arr = np.broadcast_to(arr, (length,)).copy() if arr.ndim == 0 else arr.ravel().copy()
    if arr.size != length:
        raise ValueError(f"{name} has length {arr.size}, expected {length}")
    if np.any(np.isnan(arr)):
        raise ValueError(f"{name} contains NaN")
    return arr


@dataclass(frozen=True)
class OcpSpec:
    """Prediction model, cost, horizon and bounds, all in deviation variables.

    ``u_min``/``u_max`` have one entry per input stage (``N``) and
    ``z_min``/``z_max`` one per output stage (``N + 1``); scalars broadcast.
    A missing output bound is ``None``. Only single-input, single-output
    problems are supported.
    """

    a: np.ndarray
    b: np.ndarray
    cz: np.ndarray
    cost: object
    horizon: int = 50
    u_min: np.ndarray = None
    u_max: np.ndarray = None
    z_min: np.ndarray = None
    z_max: np.ndarray = None

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        n = a.shape[0]
        b = as_matrix(self.b, "b", shape=(n, 1))
        cz = as_matrix(self.cz, "cz", shape=(1, n))
        check_scalar(self.horizon, "horizon", lo=1, integral=True)
        if self.cost.q.shape != (n, n) or self.cost.r.shape != (1, 1):
            raise ValueError("cost dimensions do not match the model")
        n_h = self.horizon
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cz", cz)
        object.__setattr__(self, "u_min", _stage_array(self.u_min, n_h, "u_min", -np.inf))
        object.__setattr__(self, "u_max", _stage_array(self.u_max, n_h, "u_max", np.inf))
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min exceeds u_max")
        for name in ("z_min", "z_max"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _stage_array(v, n_h + 1, name, np.nan))

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.horizon

    @property
    def n_lo(self):
        return 0 if self.z_min is None else self.horizon + 1

    @property
    def n_hi(self):
        return 0 if self.z_max is None else self.horizon + 1

    @property
    def n_vars(self):
        return self.n_u + self.n_lo + self.n_hi


class CondensedOcp:
    """State-independent parts of the condensed QP for an :class:`OcpSpec`.

    Predicted states are ``X = phi x0 + gam U`` (stacked over stages
    ``0..N``); the input cost is ``U' h_u U / 2 + (f x0)' U + x0' m x0``.
    """

    def __init__(self, spec):
        self.spec = spec
        a, b, c = spec.a, spec.b, spec.cost
        n, n_h = spec.n, spec.horizon
        phi = np.empty(((n_h + 1) * n, n))
        gam = np.zeros(((n_h + 1) * n, n_h))
        ak = np.eye(n)
        for k in range(n_h + 1):
            phi[k * n : (k + 1) * n] = ak
            ak = a @ ak
        for k in range(1, n_h + 1):
            gam[k * n : (k + 1) * n] = a @ gam[(k - 1) * n : k * n]
            gam[k * n : (k + 1) * n, k - 1] = b[:, 0]
        q_bar = np.kron(np.eye(n_h + 1), c.q)
        q_bar[n_h * n :, n_h * n :] = c.p
        s_bar = np.zeros((n_h, (n_h + 1) * n))
        for k in range(n_h):
            s_bar[k, k * n : (k + 1) * n] = c.s[0]
        r_bar = c.r[0, 0] * np.eye(n_h)
        sg = s_bar @ gam
        h_u = 2.0 * (gam.T @ q_bar @ gam + sg + sg.T + r_bar)
        self.phi = phi
        self.gam = gam
        self.h_u = 0.5 * (h_u + h_u.T)
        self.f = 2.0 * (gam.T @ q_bar @ phi + s_bar @ phi)
        self.m = phi.T @ q_bar @ phi
        cz_bar = np.kron(np.eye(n_h + 1), spec.cz)
        self.zx = cz_bar @ phi
        self.zu = cz_bar @ gam
        # unconstrained minimizer U = k_unc x0
        self.k_unc = -np.linalg.solve(self.h_u, self.f)

        n_lo, n_hi, n_v = spec.n_lo, spec.n_hi, spec.n_vars
        h = np.zeros((n_v, n_v))
        h[:n_h, :n_h] = self.h_u
        g_eps = np.zeros(n_v)
        i_lo = slice(n_h, n_h + n_lo)
        i_hi = slice(n_h + n_lo, n_v)
        h[i_lo, i_lo] = 2.0 * c.q_eps_l * np.eye(n_lo)
        h[i_hi, i_hi] = 2.0 * c.q_eps_u * np.eye(n_hi)
        g_eps[i_lo] = c.l_eps_l
        g_eps[i_hi] = c.l_eps_u
        rows = []
        if n_lo:
            rows.append(np.hstack([self.zu, np.eye(n_lo), np.zeros((n_lo, n_hi))]))
        if n_hi:
            rows.append(np.hstack([self.zu, np.zeros((n_hi, n_lo)), -np.eye(n_hi)]))
        self.h = h
        self.g_eps = g_eps
        self.rows = np.vstack(rows) if rows else np.zeros((0, n_v))
        self.lb = np.concatenate([spec.u_min, np.zeros(n_lo + n_hi)])
        self.ub = np.concatenate([spec.u_max, np.full(n_lo + n_hi, np.inf)])
        self.i_lo = i_lo
        self.i_hi = i_hi

    def qp(self, x0):
        """The QP for initial state ``x0``."""
        spec = self.spec
        x0 = np.asarray(x0, dtype=float).ravel()
        zx = self.zx @ x0
        g = self.g_eps.copy()
        g[: spec.n_u] = self.f @ x0
        lo, hi = [], []
        if spec.n_lo:
            lo.append(spec.z_min - zx)
            hi.append(np.full(spec.n_lo, np.inf))
        if spec.n_hi:
            lo.append(np.full(spec.n_hi, -np.inf))
            hi.append(spec.z_max - zx)
        return DenseQp(
            h=self.h,
            g=g,
            a=self.rows,
            lo=np.concatenate(lo) if lo else None,
            hi=np.concatenate(hi) if hi else None,
            lb=self.lb,
            ub=self.ub,
            offset=float(x0 @ self.m @ x0),
        )

    def split(self, v):
        """``(u, eps_l, eps_u)`` views of a decision vector."""
        n_u = self.spec.n_u
        return v[:n_u], v[self.i_lo], v[self.i_hi]

    def direct_objective(self, x0, u, eps_l=None, eps_u=None):
        """Simulate the prediction model and sum the stage, terminal and slack costs."""
        spec, c = self.spec, self.spec.cost
        x = np.asarray(x0, dtype=float).ravel()
        total = 0.0
        for k in range(spec.horizon):
            uk = np.atleast_1d(u[k])
            total += x @ c.q @ x + 2.0 * uk @ c.s @ x + uk @ c.r @ uk
            x = spec.a @ x + spec.b @ uk
        total += x @ c.p @ x
        for eps, qw, lw in ((eps_l, c.q_eps_l, c.l_eps_l), (eps_u, c.q_eps_u, c.l_eps_u)):
            if eps is not None and len(eps):
                total += qw * float(eps @ eps) + lw * float(np.sum(eps))
        return total

    def warm_start(self, x0):
        """Feasible point from the clipped unconstrained inputs, and its working set.

        Slacks are the smallest values that satisfy the soft rows.
        """
        spec = self.spec
        u = np.clip(self.k_unc @ x0, spec.u_min, spec.u_max)
        z = self.zx @ x0 + self.zu @ u
        parts, work = [u], []
        for j in range(spec.n_u):
            if u[j] <= spec.u_min[j]:
                work.append(("var", j, 1))
            elif u[j] >= spec.u_max[j]:
                work.append(("var", j, -1))
        base = spec.n_u
        if spec.n_lo:
            e = np.maximum(0.0, spec.z_min - z)
            e[np.isnan(e)] = 0.0
            parts.append(e)
            for i in range(spec.n_lo):
                work.append(("row", i, 1) if e[i] > 0 else ("var", base + i, 1))
            base += spec.n_lo
        if spec.n_hi:
            e = np.maximum(0.0, z - spec.z_max)
            e[np.isnan(e)] = 0.0
            parts.append(e)
            for i in range(spec.n_hi):
                work.append(("row", spec.n_lo + i, -1) if e[i] > 0 else ("var", base + i, 1))
        return np.concatenate(parts), work


def condense(spec, x0):
    """Dense QP of the OCP at initial state ``x0``."""
    return CondensedOcp(spec).qp(x0)


@dataclass
class MpcState:
    """Per-path controller memory: integrator ``I_{k-1}`` and last applied input."""

    integrator: float = 0.0
    u_prev: float = None


@dataclass
class MpcDiagnostics:
    slack_lo: float
    slack_hi: float
    status: str
    iterations: int
    constrained: bool
    linear_law: float
    active: list = field(default_factory=list)


class MpcCore:
    """Deviation-variable data of a matched MPC: condensed OCP and offsets.

    ``x_hat = pinv(C) (y - y_bar)`` is the static state estimate, and
    ``(a_pred, b_pred)`` advance the augmented state to obtain the next
    integrator value.
    """

    def __init__(self, aug, cost, horizon, u_bar, y_bar, c, u_bounds, z_min=None, z_max=None, z_bar=None,
                 qp_tol=1e-9):
        a, b = aug.model(cost.anti_windup)
        z_bar = y_bar if z_bar is None else z_bar
        u_lo, u_hi = u_bounds
        self.spec = OcpSpec(
            a, b, aug.cz, cost, horizon,
            u_min=u_lo - u_bar, u_max=u_hi - u_bar,
            z_min=None if z_min is None else np.asarray(z_min, dtype=float) - z_bar,
            z_max=None if z_max is None else np.asarray(z_max, dtype=float) - z_bar,
        )
        self.ocp = CondensedOcp(self.spec)
        self.aug = aug
        self.a_pred, self.b_pred = a, b
        self.c_pinv = np.linalg.pinv(np.atleast_2d(c))
        self.u_bar = float(u_bar)
        self.y_bar = float(y_bar)
        self.qp_tol = qp_tol

    def augmented_state(self, y, integrator):
        x_hat = self.c_pinv[:, 0] * (y - self.y_bar)
        return np.concatenate([x_hat, [integrator]])

    def fast(self, xt):
        """Unconstrained solutions for stacked states ``xt`` (rows), with a mask
        of the rows where no bound is binding."""
        spec = self.spec
        u = xt @ self.ocp.k_unc.T
        ok = np.all((u >= spec.u_min) & (u <= spec.u_max), axis=1)
        z = None
        if spec.n_lo or spec.n_hi:
            z = xt @ self.ocp.zx.T + u @ self.ocp.zu.T
            if spec.n_lo:
                ok &= np.all(~(z < spec.z_min), axis=1)
            if spec.n_hi:
                ok &= np.all(~(z > spec.z_max), axis=1)
        return u, ok

    def solve(self, xt):
        qp = self.ocp.qp(xt)
        v0, work = self.ocp.warm_start(xt)
        res = solve_qp(qp, tol=self.qp_tol, x0=v0, working_set=work)
        if res.status not in ("optimal", "inaccurate"):
            raise McMatchError(f"MPC QP did not converge ({res.status})")
        return res


def mpc_step(state, y, core):
    """One controller update for a single path.

    Returns
    -------
    u : float
        Applied input (absolute units).
    state : MpcState
    diagnostics : MpcDiagnostics
    """
    xt = core.augmented_state(float(y), state.integrator)
    u_all, ok = core.fast(xt[None, :])
    ocp = core.ocp
    if ok[0]:
        du = float(u_all[0, 0])
        eps_l = eps_h = 0.0
        status, iters, active = "optimal", 0, []
    else:
        res = core.solve(xt)
        u_seq, e_lo, e_hi = ocp.split(res.x)
        du = float(u_seq[0])
        eps_l = float(e_lo[0]) if e_lo.size else 0.0
        eps_h = float(e_hi[0]) if e_hi.size else 0.0
        status, iters, active = res.status, res.iterations, res.active
    nxt = core.a_pred @ xt + core.b_pred[:, 0] * du
    new_state = MpcState(integrator=float(nxt[-1]), u_prev=core.u_bar + du)
    diag = MpcDiagnostics(
        slack_lo=eps_l,
        slack_hi=eps_h,
        status=status,
        iterations=iters,
        constrained=not ok[0],
        linear_law=float(-(core.aug.k_hat @ xt)[0]),
        active=active,
    )
    return core.u_bar + du, new_state, diag


class MatchedMPC(BaseEstimator):
    """Closed-loop controller from a PI design and its matched stage cost.

    Vectorized over lanes like :class:`~mcmatch.pi.PIController`: lanes
    whose unconstrained optimum respects every bound are handled in one
    matrix product, the rest by the active-set QP.

    Parameters
    ----------
    plant : StateSpace
        Linear model used for prediction (deviation variables).
    gains : PiGains
        The matched PI design; supplies ``u_bar``, ``y_bar``, bounds and ``ts``.
    cost : StageCost
    horizon : int
    z_min, z_max : float or array, optional
        Absolute soft output bounds.
    """

    def __init__(self, plant, gains, cost, horizon=50, z_min=None, z_max=None, qp_tol=1e-9):
        self.plant = plant
        self.gains = gains
        self.cost = cost
        self.horizon = horizon
        self.z_min = z_min
        self.z_max = z_max
        self.qp_tol = qp_tol

    def _core(self):
        aug = build_augmented(self.plant, self.gains)
        g = self.gains
        z_bar = float((self.plant.cz @ self.plant.x_s)[0])
        return MpcCore(
            aug, self.cost, self.horizon, g.u_bar, g.y_bar, self.plant.c,
            (g.u_min, g.u_max), self.z_min, self.z_max, z_bar=z_bar, qp_tol=self.qp_tol,
        )

    def reset(self, n_lanes=1):
        if getattr(self, "core_", None) is None:
            self.core_ = self._core()
        self.integrator = np.zeros(n_lanes)
        self.slack_lo = np.zeros(n_lanes)
        self.slack_hi = np.zeros(n_lanes)
        self.n_qp_ = 0
        return self

    def step(self, y, t=None):
        if not hasattr(self, "integrator"):
            self.reset(np.size(y))
        core = self.core_
        y = np.atleast_1d(np.asarray(y, dtype=float))
        n_x = core.spec.n - 1
        xt = np.column_stack([np.outer(y - core.y_bar, core.c_pinv[:, 0]), self.integrator])
        u_all, ok = core.fast(xt)
        du = u_all[:, 0].copy()
        self.slack_lo[:] = 0.0
        self.slack_hi[:] = 0.0
        for j in np.flatnonzero(~ok):
            res = core.solve(xt[j])
            u_seq, e_lo, e_hi = core.ocp.split(res.x)
            du[j] = u_seq[0]
            self.slack_lo[j] = e_lo[0] if e_lo.size else 0.0
            self.slack_hi[j] = e_hi[0] if e_hi.size else 0.0
            self.n_qp_ += 1
        nxt = xt @ core.a_pred.T + np.outer(du, core.b_pred[:, 0])
        self.integrator = nxt[:, n_x].copy()
        return core.u_bar + du
