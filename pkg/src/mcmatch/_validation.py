"""Small input-validation helpers shared by the estimators and solvers."""

import numbers

import numpy as np


def as_matrix(a, name, shape=None, allow_empty=True):
    """Return ``a`` as a finite 2-D float array, optionally checking its shape."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not allow_empty and m.size == 0:
        raise ValueError(f"{name} must not be empty")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(m.shape, shape)):
            if want is not None and got != want:
                raise ValueError(f"{name} has shape {m.shape}, expected {shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name, size=None, finite=True):
    v = np.atleast_1d(np.asarray(a, dtype=float)).ravel()
    if size is not None and v.size != size:
        raise ValueError(f"{name} has length {v.size}, expected {size}")
    if finite and not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_square(m, name):
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    return m


def check_symmetric(m, name, rtol=1e-10):
    m = check_square(m, name)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def check_scalar(x, name, lo=None, hi=None, strict_lo=False, integral=False):
    """Validate a real scalar against optional bounds and return it."""
    if integral:
        if not isinstance(x, numbers.Integral) or isinstance(x, bool):
            raise TypeError(f"{name} must be an integer, got {type(x).__name__}")
    elif not isinstance(x, numbers.Real) or isinstance(x, bool):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite")
    if lo is not None and (x <= lo if strict_lo else x < lo):
        op = ">" if strict_lo else ">="
        raise ValueError(f"{name} must be {op} {lo}, got {x}")
    if hi is not None and x > hi:
        raise ValueError(f"{name} must be <= {hi}, got {x}")
    return x.item() if isinstance(x, np.generic) else x
