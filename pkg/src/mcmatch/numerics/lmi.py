"""Small LMI optimizer for the controller-matching problem.

Solves::

    minimize    beta
    over        Gamma (m x m, symmetric), P (n x n, symmetric), beta
    subject to  beta I >= H_Gamma(Gamma) + H_P(P) >= I

with::

    H_Gamma = [[K' Gamma K, K' Gamma], [Gamma K, Gamma]]
    H_P     = -[[A' P A - P, A' P B], [B' P A, B' P B]]

by a primal log-barrier path-following method. A discrete Lyapunov solve for
the closed loop ``A - B K`` supplies the strictly feasible starting point.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .._validation import as_matrix
from ..exceptions import ConvergenceError, NotStabilizingError
from .symmetric import SymMatrix, sym_eig


@dataclass(frozen=True)
class LmiProblem:
    """Data of the matching LMI: model ``(a, b)`` and feedback ``u = -k_hat x``."""

    a: np.ndarray
    b: np.ndarray
    k_hat: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        n = a.shape[0] if a.size else 0
        a = a.reshape(n, n)
        b = np.asarray(self.b, dtype=float)
        k = np.asarray(self.k_hat, dtype=float)
        m = k.shape[0] if k.ndim == 2 else (b.shape[1] if b.ndim == 2 else 1)
        b = b.reshape(n, m)
        k = k.reshape(m, n)
        for name, arr in (("a", a), ("b", b), ("k_hat", k)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "k_hat", k)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    @property
    def n_vars(self):
        """Decision count: packed Gamma, packed P, then beta."""
        m, n = self.m, self.n
        return m * (m + 1) // 2 + n * (n + 1) // 2 + 1

    def h_gamma(self, gamma):
        k = self.k_hat
        kg = k.T @ gamma
        return np.block([[kg @ k, kg], [gamma @ k, gamma]])

    def h_p(self, p):
        a, b = self.a, self.b
        pa, pb = p @ a, p @ b
        return -np.block([[a.T @ pa - p, a.T @ pb], [b.T @ pa, b.T @ pb]])

    def h(self, gamma, p):
        return self.h_gamma(gamma) + self.h_p(p)

    def unpack(self, v):
        m, n = self.m, self.n
        ng = m * (m + 1) // 2
        np_ = n * (n + 1) // 2
        gamma = SymMatrix(m, v[:ng]).to_dense()
        p = SymMatrix(n, v[ng : ng + np_]).to_dense()
        return gamma, p, float(v[ng + np_])

    def pack(self, gamma, p, beta):
        return np.concatenate(
            [
                SymMatrix.from_dense(gamma).packed,
                SymMatrix.from_dense(p).packed if self.n else np.zeros(0),
                [beta],
            ]
        )

    def basis(self):
        """``H`` evaluated at each packed basis element of (Gamma, P)."""
        mats = [self.h_gamma(e) for e in SymMatrix.basis(self.m)]
        mats += [self.h_p(e) for e in SymMatrix.basis(self.n)]
        return np.array(mats).reshape(len(mats), self.n + self.m, self.n + self.m)


@dataclass
class LmiCertificate:
    """Eigenvalue bounds recomputed at the returned point.

    ``lower = lambda_min(H - I)`` and ``upper = lambda_max(H - beta I)``;
    the point is certified when ``lower >= -tol`` and ``upper <= tol``.
    """

    lower: float
    upper: float
    tol: float

    @property
    def ok(self):
        return self.lower >= -self.tol and self.upper <= self.tol


@dataclass
class LmiSolution:
    gamma: np.ndarray
    p: np.ndarray
    beta: float
    beta_lower: float
    certificate: LmiCertificate
    newton_steps: int


def certify(problem, gamma, p, beta, tol=1e-7):
    """Check ``I <= H <= beta I`` with the Jacobi eigensolver."""
    h = problem.h(gamma, p)
    d = h.shape[0]
    lower = sym_eig(h - np.eye(d))[0][0]
    upper = sym_eig(h - beta * np.eye(d))[0][-1]
    return LmiCertificate(float(lower), float(upper), tol)


def _seed(problem):
    a, b, k = problem.a, problem.b, problem.k_hat
    n, m = problem.n, problem.m
    if n == 0:
        return np.eye(m), np.zeros((0, 0))
    a_cl = a - b @ k
    rho = np.max(np.abs(np.linalg.eigvals(a_cl)))
    if not rho < 1.0:
        raise NotStabilizingError(
            f"gain does not stabilize model: spectral radius of A - B K is {rho:.6g}"
        )
    p = solve_discrete_lyapunov(a_cl.T, np.eye(n))
    p = 0.5 * (p + p.T)
    # With v = u + K x the form is v'(Gamma - B'PB)v - 2 v'w x + x'x, whose
    # Schur complement is Gamma - B'PB - w w'. Taking 2 w w' + I keeps the
    # smallest eigenvalue near 1/2 instead of 1/|w|^2.
    w = b.T @ p @ a_cl
    gamma = b.T @ p @ b + 2.0 * (w @ w.T) + np.eye(m)
    return 0.5 * (gamma + gamma.T), p


def _chol_inv(f):
    """Inverse of a symmetric matrix, or None if it is not positive definite."""
    try:
        c = np.linalg.cholesky(f)
    except np.linalg.LinAlgError:
        return None, None
    ci = np.linalg.inv(c)
    return ci.T @ ci, 2.0 * np.sum(np.log(np.diag(c)))


def solve_lmi(problem, tol=1e-7, rtol=1e-6, mu=10.0, max_newton=2000):
    """Minimize ``beta`` subject to ``I <= H(Gamma, P) <= beta I``.

    Parameters
    ----------
    problem : LmiProblem
    tol : float
        Tolerance of the returned eigenvalue certificate.
    rtol : float
        Relative optimality: the returned ``beta`` exceeds the optimum by at
        most ``rtol * (1 + beta)`` (guaranteed by the barrier duality gap,
        reported as ``beta_lower``).
    mu : float
        Barrier parameter growth factor.

    Raises
    ------
    NotStabilizingError
        If ``k_hat`` does not stabilize ``(a, b)``; the LMI is then infeasible.
    ConvergenceError
        If Newton centering stalls or the final certificate fails.
    """
    d = problem.n + problem.m
    gamma0, p0 = _seed(problem)
    h0 = problem.h(gamma0, p0)
    w0 = np.linalg.eigvalsh(h0)
    if not w0[0] > 0:
        raise NotStabilizingError("could not construct a strictly feasible point")
    c = 2.0 / w0[0]
    beta0 = 2.0 * c * w0[-1]
    v = problem.pack(c * gamma0, c * p0, beta0)

    basis = problem.basis()
    nv = v.size
    eye = np.eye(d)
    # derivative of F1 = H - I and F2 = beta I - H with respect to each variable
    d1 = np.concatenate([basis, np.zeros((1, d, d))])
    d2 = np.concatenate([-basis, eye[None]])
    cost = np.zeros(nv)
    cost[-1] = 1.0

    def pieces(v):
        h = np.tensordot(v[:-1], basis, axes=1) if nv > 1 else np.zeros((d, d))
        return h - eye, v[-1] * eye - h

    def barrier(v, t):
        f1, f2 = pieces(v)
        i1, ld1 = _chol_inv(f1)
        if i1 is None:
            return np.inf, None, None
        i2, ld2 = _chol_inv(f2)
        if i2 is None:
            return np.inf, None, None
        return t * v[-1] - ld1 - ld2, i1, i2

    t = d / max(beta0, 1.0)
    steps = 0
    while True:
        val, i1, i2 = barrier(v, t)
        for _ in range(200):
            m1 = np.einsum("ab,ibc->iac", i1, d1)
            m2 = np.einsum("ab,ibc->iac", i2, d2)
            grad = t * cost - np.einsum("iaa->i", m1) - np.einsum("iaa->i", m2)
            hess = np.einsum("iab,jba->ij", m1, m1) + np.einsum("iab,jba->ij", m2, m2)
            hess = 0.5 * (hess + hess.T)
            try:
                delta = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                delta = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = -grad @ delta
            steps += 1
            if dec <= 1e-12:
                break
            s = 1.0
            while True:
                trial = v + s * delta
                tval, ti1, ti2 = barrier(trial, t)
                if tval <= val + 0.25 * s * grad @ delta:
                    break
                s *= 0.5
                if s < 1e-14:
                    break
            if s < 1e-14:
                break
            v, val, i1, i2 = trial, tval, ti1, ti2
            if steps > max_newton:
                raise ConvergenceError("LMI Newton iteration limit reached", residual=dec)
        gap = 2.0 * d / t
        if gap <= rtol * (1.0 + v[-1]):
            break
        t *= mu

    gamma, p, beta = problem.unpack(v)
    cert = certify(problem, gamma, p, beta, tol)
    if not cert.ok:
        raise ConvergenceError(
            "LMI solution failed its eigenvalue certificate",
            residual=max(-cert.lower, cert.upper),
        )
    return LmiSolution(
        gamma=gamma,
        p=p,
        beta=beta,
        beta_lower=beta - gap,
        certificate=cert,
        newton_steps=steps,
    )
