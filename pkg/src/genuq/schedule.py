"""Linear interpolation schedule between the target (t=0) and N(0, I) (t=1).

``gamma(t) = 1 - t`` scales the clean sample and ``rho2(t) = t`` is the added
noise variance.  ``delta`` and ``tau2`` are the drift and squared diffusion
coefficients they induce in the probability-flow ODE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check(t, lo_open=False, hi_open=False):
    t_arr = np.asarray(t, dtype=np.float64)
    lo_bad = t_arr <= 0 if lo_open else t_arr < 0
    hi_bad = t_arr >= 1 if hi_open else t_arr > 1
    if np.any(lo_bad | hi_bad | ~np.isfinite(t_arr)):
        raise ValueError(f"diffusion time out of range: {t!r}")
    return t_arr


def gamma(t):
    t = _check(t)
    return 1.0 - t


def rho2(t):
    return _check(t) * 1.0


def delta(t):
    """d log gamma / dt; pole at t = 1."""
    t = _check(t, hi_open=True)
    return -1.0 / (1.0 - t)


def tau2(t):
    """d rho2/dt - 2 (d log gamma/dt) rho2 = (1 + t) / (1 - t)."""
    t = _check(t, hi_open=True)
    return (1.0 + t) / (1.0 - t)


@dataclass(frozen=True)
class Schedule:
    t_min: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.t_min < 0.5:
            raise ValueError(f"t_min must lie in (0, 0.5), got {self.t_min}")

    gamma = staticmethod(gamma)
    rho2 = staticmethod(rho2)
    delta = staticmethod(delta)
    tau2 = staticmethod(tau2)
