"""Packed symmetric matrices and a cyclic Jacobi eigensolver.

The eigensolver is deliberately independent of LAPACK so that it can serve
as a second opinion on LMI certificates computed with numpy.
"""

from dataclasses import dataclass

import numpy as np

from .._validation import check_square
from ..exceptions import ConvergenceError


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix stored as its packed upper triangle (row-major)."""

    n: int
    packed: np.ndarray

    def __post_init__(self):
        packed = np.asarray(self.packed, dtype=float).ravel()
        if packed.size != self.n * (self.n + 1) // 2:
            raise ValueError(
                f"packed length {packed.size} does not match order {self.n}"
            )
        if not np.all(np.isfinite(packed)):
            raise ValueError("SymMatrix entries must be finite")
        object.__setattr__(self, "packed", packed)

    @classmethod
    def from_dense(cls, m, rtol=1e-10):
        m = check_square(m, "m")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if m.size and np.max(np.abs(m - m.T)) > rtol * scale:
            raise ValueError("matrix is not symmetric")
        n = m.shape[0]
        iu = np.triu_indices(n)
        return cls(n, 0.5 * (m + m.T)[iu])

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n)
        out[iu] = self.packed
        out.T[iu] = self.packed
        return out

    @staticmethod
    def basis(n):
        """Dense basis matrices matching the packed ordering."""
        mats = []
        for i, j in zip(*np.triu_indices(n)):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0
            mats.append(e)
        return mats


def sym_eig(m, tol=1e-15, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    m : SymMatrix or array_like
        Symmetric input.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm drops below
        ``tol * ||m||_F``.
    max_sweeps : int
        Sweep limit; exceeding it raises :class:`ConvergenceError`.

    Returns
    -------
    w : ndarray
        Eigenvalues in ascending order.
    v : ndarray
        Orthonormal eigenvectors as columns, ``m @ v[:, i] = w[i] * v[:, i]``.
    """
    if isinstance(m, SymMatrix):
        a = m.to_dense()
    else:
        a = SymMatrix.from_dense(m).to_dense()
    n = a.shape[0]
    v = np.eye(n)
    if n == 0:
        return np.zeros(0), v
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    threshold = tol * norm
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2) * 2.0)
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2) * 2.0)
        if off > threshold:
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps",
                residual=off,
            )
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def min_eig(m):
    return sym_eig(m)[0][0]


def max_eig(m):
    return sym_eig(m)[0][-1]
