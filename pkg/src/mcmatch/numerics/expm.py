"""Matrix exponential by scaling and squaring with a diagonal Padé(6) approximant."""

from math import factorial

import numpy as np

from .._validation import check_square

_Q = 6
_PADE = np.array(
    [
        factorial(2 * _Q - k) * factorial(_Q)
        / (factorial(2 * _Q) * factorial(k) * factorial(_Q - k))
        for k in range(_Q + 1)
    ]
)


def expm(a):
    """Return ``exp(a)`` for a square matrix.

    The argument is scaled by ``2**-j`` until its infinity norm is at most
    1/2, where the (6, 6) Padé approximant is accurate to roughly machine
    precision, and the result is squared back ``j`` times.
    """
    a = check_square(a, "a")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(a, np.inf)
    j = max(0, int(np.floor(np.log2(norm))) + 2) if norm > 0 else 0
    x = a / 2.0**j
    ident = np.eye(n)
    num = _PADE[0] * ident
    den = _PADE[0] * ident
    power = ident
    for k in range(1, _Q + 1):
        power = power @ x
        term = _PADE[k] * power
        num = num + term
        den = den + (-1) ** k * term
    e = np.linalg.solve(den, num)
    for _ in range(j):
        e = e @ e
    return e


def discretize_zoh(a_c, b_c, ts):
    """Exact zero-order-hold discretization via the block exponential.

    ``[[A, B], [0, I]] = exp([[A_c, B_c], [0, 0]] * ts)``.
    """
    a_c = check_square(a_c, "a_c")
    b_c = np.atleast_2d(np.asarray(b_c, dtype=float))
    n, m = a_c.shape[0], b_c.shape[1]
    if b_c.shape[0] != n:
        raise ValueError(f"b_c has {b_c.shape[0]} rows, expected {n}")
    if not ts > 0:
        raise ValueError(f"ts must be positive, got {ts}")
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a_c
    block[:n, n:] = b_c
    e = expm(block * ts)
    return e[:n, :n], e[:n, n:]
