"""Dense convex quadratic programming by a primal active-set method.

Problems have the form::

    minimize    0.5 x' H x + g' x + offset
    subject to  lo <= A x <= hi
                lb <=   x <= ub

Variable bounds are kept apart from general rows: while a bound is in the
working set the variable is simply frozen, so the equality-constrained
subproblems only involve the free variables. This keeps the slack-heavy MPC
problems cheap.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .._validation import as_matrix, as_vector, check_symmetric
from ..exceptions import InfeasibleError

OPTIMAL = "optimal"
MAX_ITER = "max_iter"


@dataclass
class DenseQp:
    """Convex QP data; see the module docstring for the problem form."""

    h: np.ndarray
    g: np.ndarray
    a: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    offset: float = 0.0

    def __post_init__(self):
        self.h = check_symmetric(self.h, "h")
        n = self.h.shape[0]
        self.g = as_vector(self.g, "g", size=n)
        if self.a is None:
            self.a = np.zeros((0, n))
        self.a = np.asarray(self.a, dtype=float).reshape(-1, n)
        if not np.all(np.isfinite(self.a)):
            raise ValueError("a contains non-finite entries")
        m = self.a.shape[0]
        self.lo = _bound(self.lo, m, -np.inf, "lo")
        self.hi = _bound(self.hi, m, np.inf, "hi")
        self.lb = _bound(self.lb, n, -np.inf, "lb")
        self.ub = _bound(self.ub, n, np.inf, "ub")
        if np.any(self.lo > self.hi):
            raise InfeasibleError("row bounds with lo > hi", np.flatnonzero(self.lo > self.hi))
        if np.any(self.lb > self.ub):
            raise InfeasibleError("variable bounds with lb > ub")

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def m(self):
        return self.a.shape[0]

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.h @ x + self.g @ x + self.offset

    def check_convex(self, rtol=1e-8):
        """Raise ``ValueError`` unless H is positive semidefinite."""
        if self.n == 0:
            return
        w = np.linalg.eigvalsh(self.h)
        scale = max(1.0, float(np.max(np.abs(self.h))))
        if w[0] < -rtol * scale:
            raise ValueError(f"h is not positive semidefinite (min eig {w[0]:.3e})")


def _bound(v, size, default, name):
    if v is None:
        return np.full(size, default)
    v = np.asarray(v, dtype=float)
    v = np.broadcast_to(v, (size,)).copy() if v.ndim == 0 else v.ravel().copy()
    if v.size != size:
        raise ValueError(f"{name} has length {v.size}, expected {size}")
    if np.any(np.isnan(v)):
        raise ValueError(f"{name} contains NaN")
    return v


@dataclass
class QpResult:
    """Solution of :func:`solve_qp`.

    Multipliers are signed so that ``H x + g = A' lam_rows + lam_bounds``:
    positive entries belong to active lower bounds, negative to upper ones.
    """

    x: np.ndarray
    lam_rows: np.ndarray
    lam_bounds: np.ndarray
    status: str
    iterations: int
    active: list
    objective: float
    kkt: dict = field(default_factory=dict)


class _Constraints:
    """All one-sided constraints ``normal @ x >= rhs`` in a fixed order.

    Keys identify a constraint independently of the problem data:
    ``("row", i, +1)`` is ``a_i x >= lo_i``, ``("row", i, -1)`` is
    ``a_i x <= hi_i``, and ``("var", j, +1/-1)`` are the variable bounds.
    """

    def __init__(self, qp):
        n = qp.n
        keys, normals, rhs, var, eq = [], [], [], [], []
        for i in range(qp.m):
            is_eq = qp.lo[i] == qp.hi[i]
            if np.isfinite(qp.lo[i]):
                keys.append(("row", i, 1))
                normals.append(qp.a[i])
                rhs.append(qp.lo[i])
                var.append(-1)
                eq.append(is_eq)
            if np.isfinite(qp.hi[i]) and not is_eq:
                keys.append(("row", i, -1))
                normals.append(-qp.a[i])
                rhs.append(-qp.hi[i])
                var.append(-1)
                eq.append(False)
        eye = np.eye(n)
        for j in range(n):
            is_eq = qp.lb[j] == qp.ub[j]
            if np.isfinite(qp.lb[j]):
                keys.append(("var", j, 1))
                normals.append(eye[j])
                rhs.append(qp.lb[j])
                var.append(j)
                eq.append(is_eq)
            if np.isfinite(qp.ub[j]) and not is_eq:
                keys.append(("var", j, -1))
                normals.append(-eye[j])
                rhs.append(-qp.ub[j])
                var.append(j)
                eq.append(False)
        self.keys = keys
        self.index = {k: i for i, k in enumerate(keys)}
        self.normals = np.array(normals).reshape(len(keys), n)
        self.rhs = np.array(rhs, dtype=float)
        self.var = np.array(var, dtype=int)
        self.eq = np.array(eq, dtype=bool)
        self.sign = np.array([k[2] for k in keys], dtype=float)

    def __len__(self):
        return len(self.keys)


def _phase_one(qp, tol):
    """Find a feasible point with an elastic LP, or report the violated rows."""
    n, m = qp.n, qp.m
    bounds = [
        (None if np.isinf(l) else l, None if np.isinf(u) else u)
        for l, u in zip(qp.lb, qp.ub)
    ]
    if m == 0:
        x = np.clip(np.zeros(n), qp.lb, qp.ub)
        return x
    has_lo = np.isfinite(qp.lo)
    has_hi = np.isfinite(qp.hi)
    rows, rhs = [], []
    for i in range(m):
        if has_lo[i]:
            r = np.zeros(n + 2 * m)
            r[:n] = -qp.a[i]
            r[n + i] = -1.0
            rows.append(r)
            rhs.append(-qp.lo[i])
        if has_hi[i]:
            r = np.zeros(n + 2 * m)
            r[:n] = qp.a[i]
            r[n + m + i] = -1.0
            rows.append(r)
            rhs.append(qp.hi[i])
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    res = linprog(
        c,
        A_ub=np.array(rows) if rows else None,
        b_ub=np.array(rhs) if rows else None,
        bounds=bounds + [(0, None)] * (2 * m),
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleError(f"phase-one LP failed: {res.message}")
    viol = res.x[n : n + m] + res.x[n + m :]
    scale = 1.0 + np.maximum(np.abs(np.where(has_lo, qp.lo, 0)), np.abs(np.where(has_hi, qp.hi, 0)))
    bad = np.flatnonzero(viol > tol * scale)
    if bad.size:
        raise InfeasibleError(
            f"constraints infeasible; violated rows {bad.tolist()}", rows=bad
        )
    return np.clip(res.x[:n], qp.lb, qp.ub)


def _eqp(h, grad, cons, work):
    """Minimize the quadratic model along the working-set null space.

    Returns the step ``p`` and the multipliers of the working constraints in
    the order of ``work``.
    """
    n = h.shape[0]
    work = np.asarray(work, dtype=int)
    is_var = cons.var[work] >= 0 if work.size else np.zeros(0, dtype=bool)
    fixed_idx = cons.var[work[is_var]]
    free = np.ones(n, dtype=bool)
    free[fixed_idx] = False
    row_idx = work[~is_var]
    nf = int(free.sum())
    af = cons.normals[row_idx][:, free]
    k = row_idx.size
    kkt = np.zeros((nf + k, nf + k))
    kkt[:nf, :nf] = h[np.ix_(free, free)]
    kkt[:nf, nf:] = af.T
    kkt[nf:, :nf] = af
    rhs = np.concatenate([-grad[free], np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    p = np.zeros(n)
    p[free] = sol[:nf]
    lam_rows = -sol[nf:]
    lam = np.zeros(work.size)
    lam[~is_var] = lam_rows
    if fixed_idx.size:
        resid = h @ p + grad - cons.normals[row_idx].T @ lam_rows
        lam[is_var] = resid[fixed_idx] * cons.sign[work[is_var]]
    return p, lam


def solve_qp(qp, tol=1e-9, x0=None, working_set=None, max_iter=None):
    """Solve a convex QP with a primal active-set method.

    Parameters
    ----------
    qp : DenseQp
    tol : float
        KKT tolerance, relative to the problem scale
        ``max(1, |g|_inf, |H|_max)``.
    x0 : array_like, optional
        Feasible starting point. If omitted or infeasible, a phase-one LP
        supplies one.
    working_set : iterable of keys, optional
        Warm-start working set (keys as in :class:`QpResult.active`); entries
        not active at ``x0`` are ignored.
    max_iter : int, optional
        Iteration limit, default ``10 * (n + number of constraints) + 20``.

    Returns
    -------
    QpResult

    Raises
    ------
    InfeasibleError
        If the constraints admit no feasible point.
    """
    cons = _Constraints(qp)
    n = qp.n
    h, g = qp.h, qp.g
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)), float(np.max(np.abs(h), initial=0.0)))
    feas_tol = tol * (1.0 + np.abs(cons.rhs))
    if max_iter is None:
        max_iter = 10 * (n + len(cons)) + 20

    x = None
    if x0 is not None:
        x = as_vector(x0, "x0", size=n)
        if len(cons) and np.any(cons.normals @ x - cons.rhs < -feas_tol):
            x = None
    if x is None:
        x = _phase_one(qp, tol)
        working_set = None

    slack = cons.normals @ x - cons.rhs if len(cons) else np.zeros(0)
    work = [i for i in np.flatnonzero(cons.eq)]
    if working_set is not None:
        seen_vars = set(cons.var[work][cons.var[work] >= 0].tolist())
        for key in working_set:
            i = cons.index.get(tuple(key))
            if i is None or i in work or abs(slack[i]) > feas_tol[i]:
                continue
            j = cons.var[i]
            if j >= 0:
                if j in seen_vars:
                    continue
                seen_vars.add(j)
            work.append(i)

    status = MAX_ITER
    lam = np.zeros(0)
    it = 0
    for it in range(1, max_iter + 1):
        grad = h @ x + g
        p, lam = _eqp(h, grad, cons, work)
        step_norm = np.max(np.abs(p), initial=0.0)
        if step_norm > 1e-14 * (1.0 + np.max(np.abs(x), initial=0.0)):
            npv = cons.normals @ p if len(cons) else np.zeros(0)
            slack = cons.normals @ x - cons.rhs if len(cons) else np.zeros(0)
            candidate = npv < -1e-14 * (1.0 + np.abs(cons.normals).sum(axis=1) * step_norm)
            candidate[work] = False
            alpha, block = 1.0, -1
            if np.any(candidate):
                idx = np.flatnonzero(candidate)
                ratios = np.maximum(slack[idx], 0.0) / -npv[idx]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    alpha, block = float(ratios[k]), int(idx[k])
            x = x + alpha * p
            if block >= 0:
                work.append(block)
                continue
        # x minimizes the model on the current working set
        ineq = [k for k, i in enumerate(work) if not cons.eq[i]]
        if not ineq:
            status = OPTIMAL
            break
        lam_ineq = lam[ineq]
        k = int(np.argmin(lam_ineq))
        if lam_ineq[k] >= -1e-13 * scale:
            status = OPTIMAL
            break
        del work[ineq[k]]

    lam_rows = np.zeros(qp.m)
    lam_bounds = np.zeros(n)
    for k, i in enumerate(work):
        kind, idx, sgn = cons.keys[i]
        if kind == "row":
            lam_rows[idx] += sgn * lam[k]
        else:
            lam_bounds[idx] += sgn * lam[k]
    x = np.clip(x, qp.lb, qp.ub)
    kkt = kkt_residuals(qp, x, lam_rows, lam_bounds)
    if status == OPTIMAL and max(kkt.values()) > tol * scale:
        status = "inaccurate"
    return QpResult(
        x=x,
        lam_rows=lam_rows,
        lam_bounds=lam_bounds,
        status=status,
        iterations=it,
        active=[cons.keys[i] for i in work],
        objective=float(qp.objective(x)),
        kkt=kkt,
    )


def kkt_residuals(qp, x, lam_rows, lam_bounds):
    """Infinity-norm KKT residuals for signed multipliers."""
    ax = qp.a @ x
    stat = qp.h @ x + qp.g - qp.a.T @ lam_rows - lam_bounds
    primal = max(
        np.max(np.maximum(qp.lo - ax, 0.0), initial=0.0),
        np.max(np.maximum(ax - qp.hi, 0.0), initial=0.0),
        np.max(np.maximum(qp.lb - x, 0.0), initial=0.0),
        np.max(np.maximum(x - qp.ub, 0.0), initial=0.0),
    )
    lam_lo_r, lam_hi_r = np.maximum(lam_rows, 0), np.maximum(-lam_rows, 0)
    lam_lo_b, lam_hi_b = np.maximum(lam_bounds, 0), np.maximum(-lam_bounds, 0)

    def comp(lam, gap):
        mask = (lam > 0) & np.isfinite(gap)
        return np.max(np.abs(lam[mask] * gap[mask]), initial=0.0)

    complementarity = max(
        comp(lam_lo_r, ax - qp.lo),
        comp(lam_hi_r, qp.hi - ax),
        comp(lam_lo_b, x - qp.lb),
        comp(lam_hi_b, qp.ub - x),
    )
    # multipliers on infinite sides are dual infeasible
    dual = max(
        np.max(lam_lo_r[np.isinf(qp.lo)], initial=0.0),
        np.max(lam_hi_r[np.isinf(qp.hi)], initial=0.0),
        np.max(lam_lo_b[np.isinf(qp.lb)], initial=0.0),
        np.max(lam_hi_b[np.isinf(qp.ub)], initial=0.0),
    )
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(primal),
        "dual": float(dual),
        "complementarity": float(complementarity),
    }
