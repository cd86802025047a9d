"""Discrete PI controller with clipping and back-calculation anti-windup."""

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_scalar


@dataclass(frozen=True)
class PiGains:
    """Gains, operating targets and input bounds of the PI law.

    Inputs are in the plant's input unit (L/s for the CSTR) and outputs in
    the measurement unit (K), so ``kp`` is in L/(s K) and ``ki`` in
    L/(s^2 K).
    """

    kp: float
    ki: float
    kaw: float
    u_min: float
    u_max: float
    u_bar: float
    y_bar: float
    ts: float = 1.0

    def __post_init__(self):
        for name in ("kp", "ki", "kaw", "u_min", "u_max", "u_bar", "y_bar"):
            check_scalar(getattr(self, name), name)
        check_scalar(self.ts, "ts", lo=0.0, strict_lo=True)
        if not self.u_min < self.u_max:
            raise ValueError(f"u_min ({self.u_min}) must be below u_max ({self.u_max})")

    def replace(self, **changes):
        return replace(self, **changes)


def pi_step(integrator, y, gains):
    """One PI update.

    ``e = y_bar - y``, ``I = I_prev + ts ki e``, ``u_hat = u_bar + kp e + I``,
    ``u = clip(u_hat)`` and the integrator is corrected by
    ``ts kaw (u - u_hat)``. Works elementwise on arrays.

    Returns
    -------
    u, integrator
    """
    e = gains.y_bar - y
    p = gains.kp * e
    i = integrator + gains.ts * gains.ki * e
    u_hat = gains.u_bar + p + i
    u = np.minimum(np.maximum(u_hat, gains.u_min), gains.u_max)
    i_aw = gains.ts * gains.kaw * (u - u_hat)
    return u, i + i_aw


class PIController(BaseEstimator):
    """Stateful wrapper around :func:`pi_step` for closed-loop simulation.

    The controller is vectorized over independent lanes: :meth:`reset` sets
    the lane count and ``step`` maps a vector of measurements to a vector of
    inputs. ``get_params``/``set_params`` follow the scikit-learn convention
    so gain grids can be swept with ``clone(ctrl).set_params(kp=...)``.
    """

    def __init__(self, kp, ki, kaw, u_min, u_max, u_bar, y_bar, ts=1.0):
        self.kp = kp
        self.ki = ki
        self.kaw = kaw
        self.u_min = u_min
        self.u_max = u_max
        self.u_bar = u_bar
        self.y_bar = y_bar
        self.ts = ts

    @classmethod
    def from_gains(cls, gains):
        return cls(
            gains.kp, gains.ki, gains.kaw, gains.u_min, gains.u_max,
            gains.u_bar, gains.y_bar, gains.ts,
        )

    @property
    def gains(self):
        return PiGains(
            self.kp, self.ki, self.kaw, self.u_min, self.u_max,
            self.u_bar, self.y_bar, self.ts,
        )

    def reset(self, n_lanes=1):
        self.gains_ = self.gains
        self.integrator = np.zeros(n_lanes)
        return self

    def step(self, y, t=None):
        if not hasattr(self, "integrator"):
            self.reset(np.size(y))
        u, self.integrator = pi_step(self.integrator, y, self.gains_)
        return u
