"""Platoon dynamics and fixed-step RK4 integration.

State per vehicle i = 1..n: gap s_i to the predecessor [m] and speed v_i
[m/s].  The coupled dynamics are

    ds_i/dt = v_{i-1} - v_i,      dv_i/dt = F(s_i, v_{i-1}, v_i)

with v_0 an external leader signal on an open road, or v_0 = v_n on a ring
(the total ring length sum s_i is then a first integral).  All state arrays
have shape (..., n); a leading batch axis integrates an ensemble of platoons
in lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "NonFiniteStateError",
    "PlatoonState",
    "Trajectory",
    "ConstantProfile",
    "ExpApproachProfile",
    "PiecewiseExpProfile",
    "InterpolatedProfile",
    "check_leader_admissible",
    "platoon_rhs",
    "rk4_step",
    "simulate",
]


class NonFiniteStateError(RuntimeError):
    """The integration produced a NaN or infinite state component."""

    def __init__(self, t):
        super().__init__(f"non-finite state at t = {t:.6f} s")
        self.t = t


@dataclass(frozen=True)
class PlatoonState:
    """Gaps and speeds at one instant; arrays of shape (..., n)."""

    s: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if s.shape != v.shape:
            raise ValueError(f"gap/speed shape mismatch: {s.shape} vs {v.shape}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.s.shape[-1]


# ---------------------------------------------------------------------------
# leader speed profiles (open road)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantProfile:
    """v_0(t) = v0."""

    v0: float

    def speed(self, t):
        return self.v0, 0.0 * np.asarray(t)


@dataclass(frozen=True)
class ExpApproachProfile:
    """Exponential approach v_0(t) = v_target + (v_init - v_target) e^{-rate t}."""

    v_init: float
    v_target: float
    rate: float

    def speed(self, t):
        gap = (self.v_init - self.v_target) * np.exp(-self.rate * np.asarray(t, dtype=float))
        return self.v_target + gap, -self.rate * gap


@dataclass(frozen=True)
class PiecewiseExpProfile:
    """Hold v_init, then chain exponential approaches.

    ``segments`` is a sequence of (t_switch, v_target, rate); each segment
    starts from the speed reached at its switch time, so v_0 is continuous
    (the derivative jumps at switches).
    """

    v_init: float
    segments: tuple

    def __post_init__(self):
        segs = tuple((float(t), float(vt), float(r)) for t, vt, r in self.segments)
        if any(segs[i][0] >= segs[i + 1][0] for i in range(len(segs) - 1)):
            raise ValueError("switch times must be strictly increasing")
        object.__setattr__(self, "segments", segs)

    @cached_property
    def _starts(self):
        """Speed at the start of each segment, chained in closed form."""
        starts = []
        v = self.v_init
        for i, (t0, vt, r) in enumerate(self.segments):
            if i > 0:
                tp, vp, rp = self.segments[i - 1]
                v = vp + (starts[-1] - vp) * math.exp(-rp * (t0 - tp))
            starts.append(v)
        return tuple(starts)

    def speed(self, t):
        t_arr = np.asarray(t, dtype=float)
        v = np.full_like(t_arr, self.v_init, dtype=float)
        vdot = np.zeros_like(t_arr)
        for (t0, vt, r), v0 in zip(self.segments, self._starts):
            active = t_arr >= t0
            gap = (v0 - vt) * np.exp(-r * np.where(active, t_arr - t0, 0.0))
            v = np.where(active, vt + gap, v)
            vdot = np.where(active, -r * gap, vdot)
        if np.ndim(t) == 0:
            return float(v), float(vdot)
        return v, vdot


class InterpolatedProfile:
    """Leader speed from recorded samples via a cubic spline.

    Useful to replay a measured v_0(t) — e.g. feeding one platoon's last
    vehicle to another platoon as its leader.
    """

    def __init__(self, times, values):
        from scipy.interpolate import CubicSpline

        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._spline = CubicSpline(self.times, self.values)
        self._deriv = self._spline.derivative()

    def speed(self, t):
        return self._spline(t), self._deriv(t)


def check_leader_admissible(profile, k, v_max):
    """Check 0 < v_0 < v_max and dv_0/dt >= -k v_0 for a profile.

    Closed-form profiles are certified per branch (a decaying exponential
    with rate <= k toward a nonnegative target satisfies the braking bound
    identically); interpolated profiles are sampled.

    Returns (ok, reasons) with ``reasons`` the list of violated requirements.
    """
    reasons = []
    if isinstance(profile, ConstantProfile):
        if not (0.0 < np.min(profile.v0) and np.max(profile.v0) < v_max):
            reasons.append(f"constant speed outside (0, {v_max:.6g})")
    elif isinstance(profile, ExpApproachProfile):
        if not (0.0 < np.min(profile.v_init) and np.max(profile.v_init) < v_max):
            reasons.append("initial speed outside (0, v_max)")
        if not (0.0 < np.min(profile.v_target) and np.max(profile.v_target) < v_max):
            reasons.append("target speed outside (0, v_max)")
        if np.any(np.asarray(profile.rate) < 0.0) or np.max(profile.rate) > k:
            reasons.append(f"approach rate must lie in [0, k={k}]")
    elif isinstance(profile, PiecewiseExpProfile):
        speeds = (profile.v_init,) + profile._starts + tuple(vt for _, vt, _ in profile.segments)
        if not all(0.0 < v < v_max for v in speeds):
            reasons.append("a segment speed leaves (0, v_max)")
        if any(not 0.0 <= r <= k for _, _, r in profile.segments):
            reasons.append(f"a segment rate leaves [0, k={k}]")
    else:
        t = np.asarray(getattr(profile, "times", np.linspace(0.0, 1.0, 1001)))
        tt = np.linspace(t[0], t[-1], max(4 * len(t), 1001))
        v, vdot = profile.speed(tt)
        if not (np.min(v) > 0.0 and np.max(v) < v_max):
            reasons.append("sampled speed leaves (0, v_max)")
        if np.min(vdot + k * v) < 0.0:
            reasons.append("sampled braking exceeds -k v_0")
    return (not reasons), reasons


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _predecessor_speeds(v, v0):
    """Stack [v_0, v_1, ..., v_{n-1}] along the last axis."""
    lead = np.broadcast_to(np.asarray(v0, dtype=float)[..., None], v[..., :1].shape)
    return np.concatenate([lead, v[..., :-1]], axis=-1)


def platoon_rhs(state, controller, topology="open", v0=None):
    """Time derivative (ds, dv) of a platoon state.

    ``v0`` is the leader speed for an open road (required); on a ring the
    last vehicle leads the first and ``v0`` is ignored.
    """
    s, v = state.s, state.v
    if topology == "ring":
        lead = v[..., -1]
    elif topology == "open":
        if v0 is None:
            raise ValueError("open-road dynamics need a leader speed v0")
        lead = np.asarray(v0, dtype=float)
    else:
        raise ValueError(f"unknown topology {topology!r}")
    w = _predecessor_speeds(v, lead)
    return w - v, controller.accel(s, w, v)


def _rhs_arrays(s, v, lead, controller):
    w = _predecessor_speeds(v, lead)
    return w - v, controller.accel(s, w, v)


def rk4_step(s, v, t, dt, controller, leader_speed_fn):
    """One classical Runge-Kutta step; ``leader_speed_fn(t, v)`` supplies v_0."""
    k1s, k1v = _rhs_arrays(s, v, leader_speed_fn(t, v), controller)
    h2 = 0.5 * dt
    lead_mid = leader_speed_fn(t + h2, None)
    k2s, k2v = _rhs_arrays(s + h2 * k1s, v + h2 * k1v,
                           lead_mid if lead_mid is not None else (v + h2 * k1v)[..., -1],
                           controller)
    k3s, k3v = _rhs_arrays(s + h2 * k2s, v + h2 * k2v,
                           lead_mid if lead_mid is not None else (v + h2 * k2v)[..., -1],
                           controller)
    lead_end = leader_speed_fn(t + dt, None)
    k4s, k4v = _rhs_arrays(s + dt * k3s, v + dt * k3v,
                           lead_end if lead_end is not None else (v + dt * k3v)[..., -1],
                           controller)
    s_new = s + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
    v_new = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return s_new, v_new


def _make_leader_fn(topology, leader):
    """Adapter: returns f(t, v_or_None) -> leader speed, or None on a ring.

    On a ring the RK4 stages evaluate v_0 from the *stage* speeds, so the
    adapter returns None and the stepper substitutes v[..., -1] itself.
    """
    if topology == "ring":
        return lambda t, v: (v[..., -1] if v is not None else None)
    if leader is None:
        raise ValueError("open-road simulation needs a leader profile")
    return lambda t, v: leader.speed(t)[0]


@dataclass
class Trajectory:
    """Sampled closed-loop run: arrays over m sample times.

    t (m,), s/v/u (m, n), v0 (m,) leader speed (= v_n samples on a ring).
    ``meta`` carries run provenance (dt, topology, halt info, ...).
    """

    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    u: np.ndarray
    v0: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.s.shape[1]

    def predecessor_speeds(self):
        """(m, n) array of w_i(t) = v_{i-1}(t) with the leader in column 0."""
        return np.concatenate([self.v0[:, None], self.v[:, :-1]], axis=1)

    def state_at(self, idx):
        return PlatoonState(self.s[idx], self.v[idx], float(self.t[idx]))


def simulate(
    controller,
    initial,
    *,
    topology="open",
    leader=None,
    dt=1e-3,
    horizon=None,
    output_stride=1,
    stop_condition=None,
    meta=None,
):
    """Integrate a platoon with fixed-step classical RK4.

    Parameters
    ----------
    controller : object with vectorized ``accel(s, w, v)``
    initial : PlatoonState (batched states are integrated in lockstep but a
        Trajectory can only record an unbatched run)
    topology : "open" (external leader required) or "ring" (v_0 = v_n)
    dt : step [s]; horizon : total time [s] (defaults: 120 open, 200 ring)
    output_stride : record every this-many steps (the initial state and the
        final step are always recorded)
    stop_condition : optional callable (t, s, v, v0) -> bool evaluated at
        recorded samples; on True the run is truncated there and
        ``meta["halted_at"]`` is set.

    Raises NonFiniteStateError if the state leaves the representable range.
    """
    if horizon is None:
        horizon = 200.0 if topology == "ring" else 120.0
    if initial.s.ndim != 1:
        raise ValueError("simulate records single runs; use arrays of shape (n,)")
    if topology == "ring" and initial.n < 2:
        raise ValueError("a ring needs at least 2 vehicles")

    leader_fn = _make_leader_fn(topology, leader)
    n_steps = int(round(horizon / dt))
    stride = max(int(output_stride), 1)
    rec_idx = list(range(0, n_steps + 1, stride))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    m = len(rec_idx)
    n = initial.n

    t_out = np.empty(m)
    s_out = np.empty((m, n))
    v_out = np.empty((m, n))

    s = initial.s.astype(float).copy()
    v = initial.v.astype(float).copy()
    t0 = initial.t
    halted_at = None

    def record(row, step, s, v):
        t_now = t0 + step * dt
        t_out[row] = t_now
        s_out[row] = s
        v_out[row] = v
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise NonFiniteStateError(t_now)
        if stop_condition is not None:
            lead = v[-1] if topology == "ring" else leader.speed(t_now)[0]
            return bool(stop_condition(t_now, s, v, lead))
        return False

    row = 0
    stop = record(row, 0, s, v)
    next_rec = 1
    step = 0
    while step < n_steps and not stop:
        t_now = t0 + step * dt
        s, v = rk4_step(s, v, t_now, dt, controller, leader_fn)
        step += 1
        if step == rec_idx[next_rec]:
            row += 1
            stop = record(row, step, s, v)
            next_rec += 1
    if stop:
        halted_at = float(t_out[row])
    m_used = row + 1

    t_arr = t_out[:m_used]
    s_arr = s_out[:m_used]
    v_arr = v_out[:m_used]
    if topology == "ring":
        v0_arr = v_arr[:, -1].copy()
    else:
        v0_arr = np.asarray(leader.speed(t_arr)[0], dtype=float) * np.ones_like(t_arr)
    w = np.concatenate([v0_arr[:, None], v_arr[:, :-1]], axis=1)
    u_arr = controller.accel(s_arr, w, v_arr)

    info = {
        "topology": topology,
        "dt": dt,
        "horizon": horizon,
        "output_stride": stride,
        "halted_at": halted_at,
    }
    if meta:
        info.update(meta)
    return Trajectory(t_arr, s_arr, v_arr, u_arr, v0_arr, info)
