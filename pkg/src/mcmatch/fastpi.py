"""Compiled closed-loop simulation of the three-state CSTR under PI control.

This is the throughput path used by the tuner. It performs exactly the same
arithmetic as :func:`mcmatch.sde.simulate_lanes` with a
:class:`~mcmatch.pi.PIController` and :func:`~mcmatch.sde.cstr3_system`, in
the same order, and consumes the same per-path noise streams. Tests compare
the two paths.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

from ._validation import check_scalar
from .rng import batch_noise

# numba probes TBB before falling back to OpenMP or its own workqueue; an
# outdated system TBB only produces noise, never a wrong result.
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)


@njit(cache=True, parallel=True)
def _kernel(
    x0, kp, ki, kaw, lane_gain, lane_path, xi, eta,
    u_bar, y_bar, u_min, u_max, ts, dt, sq, sd_v,
    k0, ea, beta, vol, cain, cbin, ctin, sigma,
    z_lo, store, z_out, u_out,
    sum_e2, sum_du2, n_below, failed,
):
    n_lanes = lane_gain.size
    big_k = eta.shape[1] - 1
    subs = xi.shape[2]
    for j in prange(n_lanes):
        g = lane_gain[j]
        p = lane_path[j]
        gkp = kp[g]
        tki = ts * ki[g]
        tkaw = ts * kaw[g]
        na = x0[0]
        nb = x0[1]
        nt = x0[2]
        integ = 0.0
        u_prev = u_bar
        e2 = 0.0
        du2 = 0.0
        below = 0
        for k in range(big_k + 1):
            z = nt / vol
            y = nt / vol + sd_v * eta[p, k]
            e = y_bar - y
            i_new = integ + tki * e
            u_hat = u_bar + gkp * e + i_new
            u = min(max(u_hat, u_min), u_max)
            integ = i_new + tkaw * (u - u_hat)
            dz = z - y_bar
            e2 += dz * dz
            du = u - u_prev
            du2 += du * du
            u_prev = u
            if z < z_lo:
                below += 1
            if store:
                z_out[j, k] = z
                u_out[j, k] = u
            if k == big_k:
                break
            g_t = u * sigma
            for s in range(subs):
                ca = na / vol
                cb = nb / vol
                ct = nt / vol
                rate = k0 * math.exp(-ea / ct) * max(ca, 0.0) * max(cb, 0.0)
                fa = (cain * u - ca * u) + (-1.0 * rate) * vol
                fb = (cbin * u - cb * u) + (-2.0 * rate) * vol
                ft = (ctin * u - ct * u) + (beta * rate) * vol
                na_new = na + fa * dt
                nb_new = nb + fb * dt
                nt_new = nt + ft * dt + g_t * (sq * xi[p, k, s])
                if not (math.isfinite(na_new) and math.isfinite(nb_new) and math.isfinite(nt_new)):
                    failed[j] = True
                    break
                na = na_new
                nb = nb_new
                nt = nt_new
            if failed[j]:
                break
        sum_e2[j] = e2
        sum_du2[j] = du2
        n_below[j] = below


@dataclass
class PiBatch:
    """Per-lane sums from :func:`simulate_pi_batch`.

    Lanes are ordered gain-major: lane ``g * n_paths + i`` runs gain set
    ``g`` on path ``i``. ``sum_e2`` is ``sum_k (z_k - y_bar)^2`` and
    ``sum_du2`` is ``sum_k (u_k - u_{k-1})^2`` with ``u_{-1} = u_bar``, both
    over ``k = 0..N``. Values of failed lanes are meaningless.
    """

    sum_e2: np.ndarray
    sum_du2: np.ndarray
    n_below: np.ndarray
    failed: np.ndarray
    n_gains: int
    n_paths: int
    n_samples: int
    z: np.ndarray = None
    u: np.ndarray = None

    def per_gain(self, values):
        return np.asarray(values).reshape(self.n_gains, self.n_paths)


def pi_noise(config, paths):
    """Noise arrays in the layout :func:`simulate_pi_batch` expects."""
    xi, eta = batch_noise(config.seed, paths, config.n_samples, config.substeps, 1)
    return np.ascontiguousarray(xi[..., 0]), eta


def simulate_pi_batch(params, gains, kp, ki, kaw, config, paths, z_lo=-np.inf, store=False, noise=None):
    """Simulate every gain triple ``(kp[g], ki[g], kaw[g])`` on every path.

    ``gains`` supplies the operating targets, bounds and sample time; its own
    ``kp``/``ki``/``kaw`` are ignored. ``config.x0`` is the three-state
    initial amount vector. Passing precomputed ``noise`` (from
    :func:`pi_noise`) shares the draws across calls.
    """
    kp, ki, kaw = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (kp, ki, kaw))
    kp, ki, kaw = np.broadcast_arrays(kp, ki, kaw)
    kp, ki, kaw = (np.ascontiguousarray(v) for v in (kp, ki, kaw))
    if config.x0 is None or config.x0.size != 3:
        raise ValueError("config.x0 must be a three-state initial condition")
    if abs(config.ts - gains.ts) > 1e-12:
        raise ValueError("controller and simulation sample times differ")
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    n_g, n_p = kp.size, paths.size
    check_scalar(n_p, "n_paths", lo=1, integral=True)
    xi, eta = pi_noise(config, paths) if noise is None else noise
    if xi.shape[0] != n_p:
        raise ValueError("noise does not match the number of paths")
    n_lanes = n_g * n_p
    lane_gain = np.repeat(np.arange(n_g, dtype=np.int64), n_p)
    lane_path = np.tile(np.arange(n_p, dtype=np.int64), n_g)
    big_k = config.n_samples
    dt = config.ts / config.substeps
    shape = (n_lanes, big_k + 1) if store else (1, 1)
    z_out = np.full(shape, np.nan)
    u_out = np.full(shape, np.nan)
    out = [np.zeros(n_lanes), np.zeros(n_lanes), np.zeros(n_lanes, dtype=np.int64), np.zeros(n_lanes, dtype=np.bool_)]
    _kernel(
        np.ascontiguousarray(config.x0, dtype=float), kp, ki, kaw, lane_gain, lane_path, xi, eta,
        float(gains.u_bar), float(gains.y_bar), float(gains.u_min), float(gains.u_max),
        float(gains.ts), dt, math.sqrt(dt), math.sqrt(params.rv),
        params.k0, params.ea_over_r, params.beta, params.volume,
        params.cain, params.cbin, params.ctin, params.sigma_t,
        float(z_lo), bool(store), z_out, u_out, *out,
    )
    return PiBatch(
        *out, n_gains=n_g, n_paths=n_p, n_samples=big_k + 1,
        z=z_out if store else None, u=u_out if store else None,
    )
