"""Follower acceleration laws u = F(s, w, v).

Arguments are the gap to the predecessor s [m], the predecessor speed w
[m/s] and the own speed v [m/s].  All three laws share the structure
f(s) + g(s) w - kappa(s) v:

* ``NonlinearGapController`` -- f = (k - g(s)) V(s), kappa = k, built from a
  spacing policy; bounded acceleration |u| < k v_max inside the safe box.
* ``GeneralGapController``   -- arbitrary callables (f, g, kappa).
* ``ConstantTimeGapController`` -- the classical linear law
  (k - g) g (s - r) + g w - k v with time gap T = 1/g; unbounded response.

``accel`` is vectorized over its arguments in every case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spacing import check_gain_conditions

__all__ = [
    "InvalidPolicyError",
    "NonlinearGapController",
    "GeneralGapController",
    "ConstantTimeGapController",
]


class InvalidPolicyError(ValueError):
    """Raised when a controller is built on a policy that fails validation."""


@dataclass(frozen=True)
class NonlinearGapController:
    """u = (k - g(s)) V(s) + g(s) w - k v around a spacing policy.

    Construction validates the policy (see ``check_gain_conditions``); pass
    ``allow_invalid_policy=True`` to build anyway, e.g. to reproduce runs on
    a profile whose speed budget is known to be out of bounds.  ``k`` must
    exceed the policy's g_max regardless.
    """

    policy: object
    k: float
    allow_invalid_policy: bool = False

    def __post_init__(self):
        if self.k <= self.policy.g_max:
            raise InvalidPolicyError(
                f"k = {self.k} must exceed the gain ceiling g_max = {self.policy.g_max}"
            )
        report = check_gain_conditions(self.policy, self.k)
        if not report.passed and not self.allow_invalid_policy:
            failed = ", ".join(e.name for e in report.entries if not e.passed)
            raise InvalidPolicyError(f"policy failed validation: {failed}")

    @property
    def v_max(self):
        return self.policy.v_max

    def accel(self, s, w, v):
        g, vc = self.policy.gain_and_speed(s)
        return (self.k - g) * vc + g * w - self.k * v

    def accel_bound(self):
        """Strict bound on |u| over s > a, w and v in (0, v_max)."""
        return self.k * self.policy.v_max


@dataclass(frozen=True)
class GeneralGapController:
    """u = f(s) + g(s) w - kappa(s) v for user-supplied callables.

    ``v_max`` is the declared speed budget the triple was validated against
    (see ``check_general_conditions``); it only enters ``accel_bound``.
    """

    f: Callable
    g: Callable
    kappa: Callable
    k: float
    v_max: float

    def accel(self, s, w, v):
        s_arr = np.asarray(s, dtype=float)
        fv = np.vectorize(self.f, otypes=[float])(s_arr)
        gv = np.vectorize(self.g, otypes=[float])(s_arr)
        kv = np.vectorize(self.kappa, otypes=[float])(s_arr)
        out = fv + gv * w - kv * v
        return float(out) if np.ndim(out) == 0 else out

    def accel_bound(self):
        return self.k * self.v_max


@dataclass(frozen=True)
class ConstantTimeGapController:
    """Linear constant-time-gap law u = (k - g) g (s - r) + g w - k v.

    ``g`` is the reciprocal time gap 1/T [1/s] and ``r`` the standstill
    distance [m].  Requires k > g > 0 for a stable cascade.  The response to
    a gap error grows linearly without bound, hence ``accel_bound`` is inf.
    """

    k: float
    g: float
    r: float

    def __post_init__(self):
        if not (self.k > self.g > 0.0):
            raise ValueError(f"need k > g > 0, got k={self.k}, g={self.g}")
        if self.r <= 0.0:
            raise ValueError(f"standstill distance must be positive, got r={self.r}")

    @property
    def time_gap(self):
        """T = 1/g [s]."""
        return 1.0 / self.g

    def accel(self, s, w, v):
        out = (self.k - self.g) * self.g * (np.asarray(s, dtype=float) - self.r) \
            + self.g * w - self.k * v
        return float(out) if np.ndim(out) == 0 else out

    def accel_bound(self):
        return math.inf

    def equilibrium_gap(self, v_star):
        """Steady-state gap r + T v* at cruise speed v*."""
        return self.r + v_star / self.g
