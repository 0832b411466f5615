"""Safe-set membership, barrier monitoring and invariance studies.

The safe set for a platoon with parameters (a, k, v_max) is

    0 < v_i < v_max   and   s_i > a + max(0, v_i - v_{i-1}) / k

(the gap term covers the relative-speed braking distance; on a ring
v_0 = v_n).  A reciprocal barrier

    Phi = sum_i [ 1/(s_i - a) + 1/(s_i - a - max-term) + 1/v_i + 1/(v_max - v_i) ]

blows up on the boundary; along admissible closed-loop runs it satisfies the
a-priori growth bound

    Phi(t) <= e^{kt} Phi(0) + n v_max / (k r^2) (e^{kt} - 1)

with r = lam - a - v_max/k the residual gap margin, valid when r > 0.  The
bound is only informative over a window of a few time constants, so the
monitor checks it on t in [0, 5/k] by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulation import (
    NonFiniteStateError,
    _make_leader_fn,
    _predecessor_speeds,
    rk4_step,
)

__all__ = [
    "BoundaryError",
    "SafetyParams",
    "safe_set_slacks",
    "in_safe_set",
    "barrier",
    "barrier_bound",
    "monitor_trajectory",
    "SafetyReport",
    "run_invariance_study",
]

STRICT_TOL = 1e-12  # strict inequalities need this much slack

FAMILIES = ("speed_low", "speed_high", "gap")
PHYSICAL_GAP_FAMILY = "gap_physical"  # s_i > a alone, used for linear controllers


class BoundaryError(ValueError):
    """Barrier evaluated on or outside the safe-set boundary."""


@dataclass(frozen=True)
class SafetyParams:
    """Constants defining the safe set and barrier bound.

    ``r_margin`` = lam - a - v_max/k is derived when a policy is given; it
    is positive exactly when the speed budget v_max < k (lam - a) holds, and
    the barrier growth bound is only available in that case.
    """

    a: float
    k: float
    v_max: float
    lam: float | None = None
    r_margin: float | None = None

    @classmethod
    def from_policy(cls, policy, k):
        v_max = policy.v_max
        return cls(
            a=policy.a,
            k=k,
            v_max=v_max,
            lam=policy.lam,
            r_margin=policy.lam - policy.a - v_max / k,
        )


def safe_set_slacks(s, v, v0, params):
    """Slack of every constraint; shapes follow the inputs ((..., n) states).

    Returns a dict with per-vehicle arrays:
      speed_low   v_i
      speed_high  v_max - v_i
      gap         s_i - a - max(0, v_i - v_{i-1}) / k
      gap_physical s_i - a
    All must be strictly positive for membership.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    w = _predecessor_speeds(v, v0)
    gap_term = np.maximum(0.0, v - w) / params.k
    return {
        "speed_low": v,
        "speed_high": params.v_max - v,
        "gap": s - params.a - gap_term,
        PHYSICAL_GAP_FAMILY: s - params.a,
    }


def in_safe_set(s, v, v0, params, families=FAMILIES):
    """Strict membership test; returns (inside, min_slack_per_family)."""
    slacks = safe_set_slacks(s, v, v0, params)
    mins = {name: float(np.min(slacks[name])) for name in families}
    inside = all(m > STRICT_TOL for m in mins.values())
    return inside, mins


def barrier(s, v, v0, params):
    """Reciprocal boundary barrier Phi; raises BoundaryError outside the set."""
    slacks = safe_set_slacks(s, v, v0, params)
    terms = np.stack(
        [slacks[PHYSICAL_GAP_FAMILY], slacks["gap"], slacks["speed_low"], slacks["speed_high"]]
    )
    if np.any(terms <= 0.0):
        raise BoundaryError("state on or outside the safe-set boundary")
    return float(np.sum(1.0 / terms)) if terms.ndim == 2 else np.sum(1.0 / terms, axis=(0, -1))


def barrier_bound(phi0, t, n, params):
    """A-priori growth bound e^{kt} Phi(0) + n v_max/(k r^2) (e^{kt} - 1).

    Requires a positive residual margin r; raises ValueError otherwise.
    """
    r = params.r_margin
    if r is None or r <= 0.0:
        raise ValueError("barrier bound needs a positive residual margin r")
    growth = np.exp(params.k * np.asarray(t, dtype=float))
    return growth * phi0 + n * params.v_max / (params.k * r * r) * (growth - 1.0)


@dataclass
class Violation:
    t: float
    family: str
    vehicle: int
    slack: float


@dataclass
class SafetyReport:
    """Outcome of monitoring a trajectory against the safe set."""

    passed: bool
    first_violation: Violation | None
    min_slacks: dict
    flagged_families: tuple
    phi_max_ratio: float | None = None   # max Phi/bound over the check window
    phi_window: float | None = None
    notes: list = field(default_factory=list)

    def to_text(self):
        lines = [f"passed: {self.passed}"]
        if self.first_violation is not None:
            fv = self.first_violation
            lines.append(
                f"first_violation: t={fv.t:.6g} family={fv.family}"
                f" vehicle={fv.vehicle} slack={fv.slack:.6g}"
            )
        else:
            lines.append("first_violation: none")
        for name, val in self.min_slacks.items():
            lines.append(f"min_slack_{name}: {val:.6g}")
        lines.append(f"flagged_families: {','.join(self.flagged_families)}")
        if self.phi_max_ratio is not None:
            lines.append(f"phi_max_ratio: {self.phi_max_ratio:.6g} (window {self.phi_window:.6g} s)")
        else:
            lines.append("phi_max_ratio: n/a")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def monitor_trajectory(traj, params, physical_only=False, phi_window=None):
    """Scan a recorded run for safe-set exits and barrier-bound violations.

    ``physical_only`` restricts the *flagged* families to s_i > a and
    0 < v_i < v_max — appropriate for linear controllers, whose relative-speed
    gap term is reported but not enforced.  The barrier bound is checked on
    t - t_0 <= phi_window (default 5/k) and only when the residual margin is
    positive and the run never leaves the set.

    An exit means an actual sign crossing (slack <= 0).  Braking transients
    legitimately approach the open boundary v_i > 0 asymptotically — below the
    activation gap the speed decays like exp(-k t) and can reach 1e-40 while
    staying provably inside the set — so a small positive tolerance here would
    flag safe runs.
    """
    slacks = safe_set_slacks(traj.s, traj.v, traj.v0, params)
    families = ("speed_low", "speed_high", PHYSICAL_GAP_FAMILY) if physical_only else FAMILIES
    min_slacks = {name: float(np.min(vals)) for name, vals in slacks.items()}

    first = None
    for row in range(len(traj.t)):
        for name in families:
            vals = slacks[name][row]
            j = int(np.argmin(vals))
            if vals[j] <= 0.0:
                first = Violation(float(traj.t[row]), name, j + 1, float(vals[j]))
                break
        if first is not None:
            break

    notes = []
    phi_ratio = None
    window = phi_window if phi_window is not None else 5.0 / params.k
    if first is None and not physical_only:
        if params.r_margin is not None and params.r_margin > 0.0:
            in_window = traj.t - traj.t[0] <= window + 1e-12
            terms = np.stack(
                [slacks[PHYSICAL_GAP_FAMILY], slacks["gap"], slacks["speed_low"], slacks["speed_high"]]
            )
            phi = np.sum(1.0 / terms[:, in_window], axis=(0, 2))
            bound = barrier_bound(phi[0], traj.t[in_window] - traj.t[0], traj.n, params)
            phi_ratio = float(np.max(phi / bound))
        else:
            notes.append("barrier bound not applicable: residual margin r <= 0")

    passed = first is None and (phi_ratio is None or phi_ratio <= 1.0 + 1e-9)
    return SafetyReport(passed, first, min_slacks, families, phi_ratio, window, notes)


def write_slack_csv(traj, params, path):
    """Per-sample slack table: t, then one column per (family, vehicle)."""
    slacks = safe_set_slacks(traj.s, traj.v, traj.v0, params)
    n = traj.n
    names = []
    cols = [traj.t]
    for fam in FAMILIES + (PHYSICAL_GAP_FAMILY,):
        for i in range(n):
            names.append(f"{fam}_{i + 1}")
            cols.append(slacks[fam][:, i])
    header = ",".join(["t"] + names)
    data = np.column_stack(cols)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


# ---------------------------------------------------------------------------
# ensemble invariance studies
# ---------------------------------------------------------------------------


def sample_safe_states(rng, n_runs, n, params, v0_init, margin=0.05):
    """Draw (s, v) ensembles strictly inside the safe set.

    Speeds are uniform in the margin-shrunk band; gaps sit above the
    relative-speed line by at least ``margin * a``.  ``v0_init`` is the
    leader speed at t = 0 (array of shape (n_runs,) or scalar).
    """
    v_lo = margin * params.v_max
    v_hi = (1.0 - margin) * params.v_max
    v = rng.uniform(v_lo, v_hi, size=(n_runs, n))
    w = _predecessor_speeds(v, np.broadcast_to(np.asarray(v0_init, dtype=float), (n_runs,)))
    base = params.a + np.maximum(0.0, v - w) / params.k
    s = base + margin * params.a + rng.uniform(0.0, 3.0 * params.a, size=(n_runs, n))
    return s, v


def sample_safe_ring_states(rng, n_runs, n, params, ring_length, margin=0.05, max_tries=2000):
    """Rejection-sample ring ensembles: inside the set and sum_i s_i = L."""
    out_s = np.empty((n_runs, n))
    out_v = np.empty((n_runs, n))
    got = 0
    floor = params.a * (1.0 + margin)
    budget = ring_length - n * floor
    if budget <= 0:
        raise ValueError("ring too short for the requested margin")
    for _ in range(max_tries):
        if got >= n_runs:
            break
        batch = n_runs
        # gaps: floor + Dirichlet-distributed split of the remaining length
        frac = rng.dirichlet(np.ones(n), size=batch)
        s = floor + frac * budget
        v = rng.uniform(margin * params.v_max, (1.0 - margin) * params.v_max, size=(batch, n))
        w = _predecessor_speeds(v, v[:, -1])
        ok = np.all(s - params.a - np.maximum(0.0, v - w) / params.k > margin * params.a, axis=1)
        take = min(int(np.sum(ok)), n_runs - got)
        out_s[got : got + take] = s[ok][:take]
        out_v[got : got + take] = v[ok][:take]
        got += take
    if got < n_runs:
        raise RuntimeError("rejection sampling failed to fill the ensemble")
    return out_s, out_v


@dataclass
class InvarianceReport:
    n_runs: int
    horizon: float
    dt: float
    violations: int
    min_slacks: dict

    @property
    def passed(self):
        return self.violations == 0


def run_invariance_study(
    controller,
    params,
    *,
    topology="open",
    n=5,
    n_runs=100,
    horizon=60.0,
    dt=1e-3,
    rng=None,
    leader=None,
    ring_length=None,
    margin=0.05,
):
    """Integrate an ensemble from random safe initial states and count exits.

    The whole ensemble advances in lockstep as a (n_runs, n) batch; slacks
    are accumulated every step, so no trajectories are stored.  For an open
    road pass an admissible ``leader`` (batched profiles — array-valued
    fields of shape (n_runs,) — are supported); on a ring the gap samples
    respect sum s_i = ring_length.

    A run counts as a violation only on an actual sign crossing (slack <= 0);
    asymptotic approach to the open boundary, e.g. speeds decaying through
    1e-18 during a hard braking transient, is safe behaviour, not an exit.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if topology == "open":
        if leader is None:
            raise ValueError("open-road study needs a leader profile")
        v0_init = leader.speed(0.0)[0]
        s, v = sample_safe_states(rng, n_runs, n, params, v0_init, margin)
    else:
        if ring_length is None:
            raise ValueError("ring study needs ring_length")
        s, v = sample_safe_ring_states(rng, n_runs, n, params, ring_length, margin)

    leader_fn = _make_leader_fn(topology, leader)
    n_steps = int(round(horizon / dt))
    mins = {name: math.inf for name in FAMILIES}
    violations = 0

    def scan(s, v, lead):
        nonlocal violations
        slacks = safe_set_slacks(s, v, lead, params)
        bad = np.zeros(s.shape[0], dtype=bool)
        for name in FAMILIES:
            m = float(np.min(slacks[name]))
            if m < mins[name]:
                mins[name] = m
            bad |= np.any(slacks[name] <= 0.0, axis=-1)
        violations = max(violations, int(np.sum(bad)))

    lead0 = leader_fn(0.0, v)
    scan(s, v, lead0 if lead0 is not None else v[:, -1])
    for step in range(n_steps):
        t_now = step * dt
        s, v = rk4_step(s, v, t_now, dt, controller, leader_fn)
        lead = leader_fn(t_now + dt, v)
        scan(s, v, lead if lead is not None else v[:, -1])
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
        raise NonFiniteStateError(horizon)
    return InvarianceReport(n_runs, horizon, dt, violations, mins)
