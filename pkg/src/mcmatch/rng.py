"""Counter-based random streams for reproducible Monte Carlo paths.

Every path owns a Philox4x64-10 generator keyed by ``(seed, path)``. The
stream id (process noise or measurement noise) sits in the most significant
counter word, so the two streams of a path can never overlap and the draws
of a path do not depend on how paths are grouped or scheduled. Gaussians are
produced by numpy's ``Generator.standard_normal`` (ziggurat).
"""

import numpy as np

PROCESS_STREAM = 0
MEASUREMENT_STREAM = 1

_U64 = 2**64


def path_generator(seed, path, stream):
    if not (0 <= seed < _U64 and 0 <= path < _U64):
        raise ValueError("seed and path index must fit in 64 unsigned bits")
    key = np.array([seed, path], dtype=np.uint64)
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def path_noise(seed, path, n_samples, substeps, n_wiener=1):
    """Standard normal draws of one path.

    Returns
    -------
    process : ndarray, shape (n_samples, substeps, n_wiener)
    measurement : ndarray, shape (n_samples + 1,)
    """
    proc = path_generator(seed, path, PROCESS_STREAM).standard_normal(
        (n_samples, substeps, n_wiener)
    )
    meas = path_generator(seed, path, MEASUREMENT_STREAM).standard_normal(n_samples + 1)
    return proc, meas


def batch_noise(seed, paths, n_samples, substeps, n_wiener=1):
    """Stack :func:`path_noise` over ``paths``; leading axis indexes the path."""
    paths = np.asarray(paths, dtype=np.uint64).ravel()
    proc = np.empty((paths.size, n_samples, substeps, n_wiener))
    meas = np.empty((paths.size, n_samples + 1))
    for i, p in enumerate(paths):
        proc[i], meas[i] = path_noise(seed, int(p), n_samples, substeps, n_wiener)
    return proc, meas
