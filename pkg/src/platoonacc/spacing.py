"""Spacing-policy gain profiles and the equilibrium speed curves they induce.

A spacing policy is a gap-dependent gain g(s) [1/s]: zero below an
engagement gap lam, positive and bounded by g_max beyond it.  Its running
integral

    V(s) = integral_a^s g(z) dz        [m/s]

is the speed a follower sustains in steady state at gap s, so V doubles as
the microscopic fundamental diagram v = V(1/rho).  Two concrete profiles are
provided:

* ``RampPlateauPolicy`` -- piecewise closed form: zero, then a unit-slope
  ramp up to g_max, a plateau, and an exponential tail past ``gamma``.
* ``TabulatedPolicy`` -- linear interpolation through (s, g) knots with an
  exponential tail after the last knot.

Both expose exact antiderivatives (``speed`` and ``speed_integral``), so all
downstream energy/Lyapunov computations avoid numerical quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "RampPlateauPolicy",
    "TabulatedPolicy",
    "ConditionReport",
    "cyclic_difference_min_eigenvalue",
    "check_gain_conditions",
    "check_general_conditions",
    "check_ring_sector_condition",
]

# Strict inequalities are tested with this much slack; boundary states are
# indistinguishable from violations in floating point.
STRICT_TOL = 1e-12


def _as_float_or_array(x, scalar_input):
    return float(x) if scalar_input else x


@dataclass(frozen=True)
class RampPlateauPolicy:
    """Closed-form spacing gain: zero / unit-slope ramp / plateau / exp tail.

    Parameters
    ----------
    a : float
        Minimum safe gap [m]; speeds are measured from this datum.
    lam : float
        Engagement gap [m]; g(s) = 0 for s <= lam.  Must exceed ``a``.
    gamma : float
        Start of the exponential tail [m]; must exceed ``lam + g_max`` so the
        plateau is nonempty.
    g_max : float
        Gain ceiling [1/s]; also the plateau value.
    """

    a: float
    lam: float
    gamma: float
    g_max: float

    def __post_init__(self):
        if not (0.0 < self.a < self.lam):
            raise ValueError(f"need 0 < a < lam, got a={self.a}, lam={self.lam}")
        if self.g_max <= 0.0:
            raise ValueError(f"g_max must be positive, got {self.g_max}")
        if self.gamma <= self.lam + self.g_max:
            raise ValueError(
                f"gamma={self.gamma} must exceed lam + g_max = {self.lam + self.g_max}"
                " (the ramp must finish before the tail starts)"
            )

    # -- basic geometry ----------------------------------------------------

    @property
    def knots(self):
        """Breakpoints of the piecewise definition [m]."""
        return (self.a, self.lam, self.lam + self.g_max, self.gamma)

    @property
    def tail_start(self):
        return self.gamma

    @cached_property
    def v_max(self):
        """Supremum of the speed curve: g_max^2/2 + g_max*(gamma - g_max - lam) + g_max."""
        g = self.g_max
        return 0.5 * g * g + g * (self.gamma - g - self.lam) + g

    # -- evaluation ----------------------------------------------------------

    def gain(self, s):
        """g(s) [1/s]; accepts scalars or arrays."""
        s_arr = np.asarray(s, dtype=float)
        lam, gmax, gamma = self.lam, self.g_max, self.gamma
        out = np.select(
            [s_arr <= lam, s_arr <= lam + gmax, s_arr <= gamma],
            [0.0, s_arr - lam, gmax],
            default=gmax * np.exp(gamma - np.maximum(s_arr, gamma)),
        )
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def speed(self, s, strict=True):
        """Equilibrium speed V(s) = integral_a^s g [m/s].

        With ``strict`` (the default) gaps below ``a`` raise, since they are
        outside the physical domain; controllers evaluate with strict=False,
        where the natural extension V = 0 below lam applies.
        """
        s_arr = np.asarray(s, dtype=float)
        if strict and np.any(s_arr < self.a - STRICT_TOL):
            raise ValueError(f"gap below minimum a={self.a}")
        lam, gmax, gamma = self.lam, self.g_max, self.gamma
        g_gamma = 0.5 * gmax * gmax + gmax * (gamma - lam - gmax)  # V at tail start
        out = np.select(
            [s_arr <= lam, s_arr <= lam + gmax, s_arr <= gamma],
            [
                0.0,
                0.5 * (s_arr - lam) ** 2,
                0.5 * gmax * gmax + gmax * (s_arr - lam - gmax),
            ],
            default=g_gamma + gmax * (1.0 - np.exp(gamma - np.maximum(s_arr, gamma))),
        )
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def gain_and_speed(self, s):
        """(g(s), V(s)) in one pass, sharing the branch masks.

        This is the integrator's hot path: with an np.where chain instead of
        two np.select calls a closed-loop step costs about a third as much.
        """
        s_arr = np.asarray(s, dtype=float)
        lam, gmax, gamma = self.lam, self.g_max, self.gamma
        d = s_arr - lam
        ramp = s_arr <= lam + gmax
        plateau = s_arr <= gamma
        e = np.exp(np.minimum(gamma - s_arr, 0.0))  # tail factor, 1 elsewhere
        v2 = 0.5 * gmax * gmax
        v_gamma = v2 + gmax * (gamma - lam - gmax)
        g = np.where(ramp, np.maximum(d, 0.0), np.where(plateau, gmax, gmax * e))
        vc = np.where(
            ramp,
            0.5 * np.maximum(d, 0.0) ** 2,
            np.where(plateau, v2 + gmax * (d - gmax), v_gamma + gmax * (1.0 - e)),
        )
        return g, vc

    def speed_integral(self, s):
        """Antiderivative H(s) = integral_a^s V(z) dz [m^2/s], H(a) = 0.

        Exact per branch; the energy integrals in the analysis module reduce
        to H, so no quadrature is needed along trajectories.
        """
        s_arr = np.asarray(s, dtype=float)
        lam, gmax, gamma = self.lam, self.g_max, self.gamma
        v2 = 0.5 * gmax * gmax            # V at end of ramp
        h2 = gmax ** 3 / 6.0              # H at end of ramp
        d_gam = gamma - lam - gmax        # plateau length
        h3 = h2 + v2 * d_gam + 0.5 * gmax * d_gam * d_gam  # H at gamma
        d = s_arr - lam - gmax
        out = np.select(
            [s_arr <= lam, s_arr <= lam + gmax, s_arr <= gamma],
            [
                0.0,
                (s_arr - lam) ** 3 / 6.0,
                h2 + v2 * d + 0.5 * gmax * d * d,
            ],
            default=h3
            + self.v_max * (s_arr - gamma)
            + gmax * (np.exp(gamma - np.maximum(s_arr, gamma)) - 1.0),
        )
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def gap_for_speed(self, v, tol_factor=1e-12):
        """Invert the speed curve: the unique s* > lam with V(s*) = v.

        Bisection to |V(s*) - v| <= tol_factor * v_max.  Requires
        0 < v < v_max (the curve is flat outside that range).
        """
        return _invert_speed_curve(self, v, tol_factor)


@dataclass(frozen=True)
class TabulatedPolicy:
    """Spacing gain from measured (s, g) knots with an exponential tail.

    The first knot must sit at (lam, 0); the gain is zero for s <= lam,
    piecewise linear through the knots, and decays as
    g_last * exp(-tail_rate * (s - s_last)) beyond the last knot.
    """

    a: float
    knots_s: tuple
    knots_g: tuple
    tail_rate: float = 1.0

    def __post_init__(self):
        ks = np.asarray(self.knots_s, dtype=float)
        kg = np.asarray(self.knots_g, dtype=float)
        if ks.ndim != 1 or ks.shape != kg.shape or ks.size < 2:
            raise ValueError("need matching 1-d knot arrays with at least 2 knots")
        if not (0.0 < self.a < ks[0]):
            raise ValueError(f"need 0 < a < first knot gap, got a={self.a}, s0={ks[0]}")
        if np.any(np.diff(ks) <= 0):
            raise ValueError("knot gaps must be strictly increasing")
        if np.any(kg < 0) or kg[0] != 0.0:
            raise ValueError("knot gains must be >= 0 with g = 0 at the first knot")
        if not np.all(np.isfinite(ks)) or not np.all(np.isfinite(kg)):
            raise ValueError("knots must be finite")
        if self.tail_rate <= 0.0:
            raise ValueError("tail_rate must be positive")
        object.__setattr__(self, "knots_s", tuple(float(x) for x in ks))
        object.__setattr__(self, "knots_g", tuple(float(x) for x in kg))

    @property
    def lam(self):
        """Engagement gap [m] -- the first knot."""
        return self.knots_s[0]

    @property
    def tail_start(self):
        return self.knots_s[-1]

    @property
    def knots(self):
        return (self.a,) + self.knots_s

    @cached_property
    def g_max(self):
        return max(self.knots_g)

    @cached_property
    def _cum(self):
        """Cumulative (V, H) at the knots; V(lam) = H(a) = 0 since g = 0 below lam."""
        ks = np.asarray(self.knots_s)
        kg = np.asarray(self.knots_g)
        dv = np.diff(ks) * (kg[:-1] + kg[1:]) / 2.0      # trapezoid on each segment
        v_at = np.concatenate([[0.0], np.cumsum(dv)])
        # H on a segment with linear g: H' = V, V quadratic -> cubic increments
        d = np.diff(ks)
        m = np.diff(kg) / d
        dh = v_at[:-1] * d + kg[:-1] * d * d / 2.0 + m * d ** 3 / 6.0
        h_at = np.concatenate([[0.0], np.cumsum(dh)])
        return v_at, h_at

    @cached_property
    def v_max(self):
        v_at, _ = self._cum
        return float(v_at[-1] + self.knots_g[-1] / self.tail_rate)

    def gain(self, s):
        s_arr = np.asarray(s, dtype=float)
        ks = np.asarray(self.knots_s)
        kg = np.asarray(self.knots_g)
        interior = np.interp(s_arr, ks, kg)
        tail = kg[-1] * np.exp(-self.tail_rate * np.maximum(s_arr - ks[-1], 0.0))
        out = np.where(s_arr <= ks[0], 0.0, np.where(s_arr >= ks[-1], tail, interior))
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def speed(self, s, strict=True):
        s_arr = np.asarray(s, dtype=float)
        if strict and np.any(s_arr < self.a - STRICT_TOL):
            raise ValueError(f"gap below minimum a={self.a}")
        ks = np.asarray(self.knots_s)
        kg = np.asarray(self.knots_g)
        v_at, _ = self._cum
        idx = np.clip(np.searchsorted(ks, s_arr, side="right") - 1, 0, len(ks) - 2)
        u = s_arr - ks[idx]
        m = (kg[idx + 1] - kg[idx]) / (ks[idx + 1] - ks[idx])
        interior = v_at[idx] + kg[idx] * u + 0.5 * m * u * u
        beta = self.tail_rate
        ut = np.maximum(s_arr - ks[-1], 0.0)
        tail = v_at[-1] + kg[-1] / beta * (1.0 - np.exp(-beta * ut))
        out = np.where(s_arr <= ks[0], 0.0, np.where(s_arr >= ks[-1], tail, interior))
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def gain_and_speed(self, s):
        """(g(s), V(s)) with the segment lookup done once."""
        s_arr = np.asarray(s, dtype=float)
        ks = np.asarray(self.knots_s)
        kg = np.asarray(self.knots_g)
        v_at, _ = self._cum
        idx = np.clip(np.searchsorted(ks, s_arr, side="right") - 1, 0, len(ks) - 2)
        u = s_arr - ks[idx]
        m = (kg[idx + 1] - kg[idx]) / (ks[idx + 1] - ks[idx])
        beta = self.tail_rate
        ut = np.maximum(s_arr - ks[-1], 0.0)
        e = np.exp(-beta * ut)
        below = s_arr <= ks[0]
        tail = s_arr >= ks[-1]
        g = np.where(below, 0.0, np.where(tail, kg[-1] * e, kg[idx] + m * u))
        vc = np.where(
            below,
            0.0,
            np.where(
                tail,
                v_at[-1] + kg[-1] / beta * (1.0 - e),
                v_at[idx] + kg[idx] * u + 0.5 * m * u * u,
            ),
        )
        return g, vc

    def speed_integral(self, s):
        s_arr = np.asarray(s, dtype=float)
        ks = np.asarray(self.knots_s)
        kg = np.asarray(self.knots_g)
        v_at, h_at = self._cum
        idx = np.clip(np.searchsorted(ks, s_arr, side="right") - 1, 0, len(ks) - 2)
        u = s_arr - ks[idx]
        m = (kg[idx + 1] - kg[idx]) / (ks[idx + 1] - ks[idx])
        interior = h_at[idx] + v_at[idx] * u + kg[idx] * u * u / 2.0 + m * u ** 3 / 6.0
        beta = self.tail_rate
        ut = np.maximum(s_arr - ks[-1], 0.0)
        tail = (
            h_at[-1]
            + v_at[-1] * ut
            + kg[-1] / beta * ut
            + kg[-1] / beta ** 2 * (np.exp(-beta * ut) - 1.0)
        )
        out = np.where(s_arr <= ks[0], 0.0, np.where(s_arr >= ks[-1], tail, interior))
        return _as_float_or_array(out, np.isscalar(s) or np.ndim(s) == 0)

    def gap_for_speed(self, v, tol_factor=1e-12):
        return _invert_speed_curve(self, v, tol_factor)


def _invert_speed_curve(policy, v, tol_factor):
    """Bisection for V(s) = v on (lam, inf); V is strictly increasing there."""
    v = float(v)
    v_max = policy.v_max
    if not (0.0 < v < v_max):
        raise ValueError(f"target speed must lie in (0, v_max={v_max:.6g}), got {v}")
    tol = tol_factor * v_max
    lo = policy.lam
    hi = policy.tail_start + 30.0
    while policy.speed(hi) < v:           # tail is asymptotic; expand as needed
        hi += 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        err = policy.speed(mid) - v
        if abs(err) <= tol:
            return mid
        if err < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol / max(policy.g_max, 1e-30):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# condition validation
# ---------------------------------------------------------------------------


@dataclass
class ConditionEntry:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class ConditionReport:
    """Outcome of a set of analytic conditions; ``margin`` > 0 means satisfied."""

    entries: list
    constants: dict

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def entry(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_text(self):
        lines = []
        for key, val in self.constants.items():
            lines.append(f"{key}: {val:.10g}" if isinstance(val, float) else f"{key}: {val}")
        for e in self.entries:
            status = "pass" if e.passed else "FAIL"
            lines.append(f"{e.name}: {status} (margin {e.margin:.6g}) {e.detail}".rstrip())
        lines.append(f"all: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _scan_grid(policy, s_max=None, grid_points=10_000):
    """Evaluation grid: uniform over [a, max(tail_start+30, s_max)] plus the knots."""
    hi = policy.tail_start + 30.0
    if s_max is not None:
        hi = max(hi, float(s_max))
    grid = np.linspace(policy.a, hi, grid_points)
    return np.unique(np.concatenate([grid, np.asarray(policy.knots, dtype=float)]))


def check_gain_conditions(policy, k, s_max=None, grid_points=10_000):
    """Validate a gain profile against the nonlinear-controller hypotheses.

    Checks, on a dense grid plus the knots:

    * positivity/ceiling: 0 < g(s) <= g_max for s > lam, and g <= g_max overall
    * disengage zone: g identically 0 on [a, lam]
    * speed budget: v_max < k*(lam - a), reported with the residual gap margin
      r = lam - a - v_max/k
    * gain headroom: k > g_max

    Returns a ConditionReport whose ``constants`` include v_max and r_margin.
    """
    grid = _scan_grid(policy, s_max, grid_points)
    g_vals = policy.gain(grid)
    v_max = policy.v_max
    entries = []

    above = grid > policy.lam + STRICT_TOL
    min_above = float(np.min(g_vals[above])) if np.any(above) else math.nan
    max_all = float(np.max(g_vals))
    pos_ok = min_above > 0.0 and max_all <= policy.g_max + STRICT_TOL
    entries.append(
        ConditionEntry(
            "gain_positive_bounded",
            pos_ok,
            min(min_above, policy.g_max + STRICT_TOL - max_all),
            f"min g above lam = {min_above:.6g}, max g = {max_all:.6g}",
        )
    )

    zone = grid <= policy.lam + STRICT_TOL
    max_zone = float(np.max(np.abs(g_vals[zone])))
    entries.append(
        ConditionEntry("disengage_zone", max_zone == 0.0, -max_zone, "g on [a, lam]")
    )

    budget = k * (policy.lam - policy.a) - v_max
    r_margin = policy.lam - policy.a - v_max / k
    entries.append(
        ConditionEntry(
            "speed_budget",
            budget > 0.0,
            budget,
            f"v_max = {v_max:.6g} vs k*(lam-a) = {k * (policy.lam - policy.a):.6g}",
        )
    )

    entries.append(ConditionEntry("gain_headroom", k > policy.g_max, k - policy.g_max))

    return ConditionReport(
        entries,
        {"v_max": float(v_max), "r_margin": float(r_margin), "k": float(k)},
    )


def check_general_conditions(f, g, kappa, k, lam, a, v_max, s_max=None, grid_points=10_000):
    """Validate a general feedback triple u = f(s) + g(s) w - kappa(s) v.

    Conditions, scanned on [a, s_max] (default lam + 200):

    * ordering: 0 <= g(s) < kappa(s) <= k everywhere
    * speed budget: f(s)/(kappa(s) - g(s)) <= v_max and v_max < k*(lam - a)
    * disengage zone: f = g = 0 and kappa = k on [a, lam]
    """
    hi = float(s_max) if s_max is not None else lam + 200.0
    grid = np.linspace(a, hi, grid_points)
    fv = np.asarray([f(s) for s in grid], dtype=float)
    gv = np.asarray([g(s) for s in grid], dtype=float)
    kv = np.asarray([kappa(s) for s in grid], dtype=float)
    entries = []

    order_margin = float(min(np.min(gv), np.min(kv - gv), np.min(k - kv)))
    entries.append(
        ConditionEntry(
            "gain_ordering",
            bool(np.all(gv >= 0) and np.all(kv - gv > 0) and np.all(kv <= k + STRICT_TOL)),
            order_margin,
            "0 <= g < kappa <= k",
        )
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(kv - gv > 0, fv / (kv - gv), np.inf)
    worst_ratio = float(np.max(ratio))
    budget = k * (lam - a) - v_max
    entries.append(
        ConditionEntry(
            "speed_budget",
            worst_ratio <= v_max + STRICT_TOL and budget > 0.0,
            min(v_max - worst_ratio, budget),
            f"max f/(kappa-g) = {worst_ratio:.6g}, v_max = {v_max:.6g},"
            f" k*(lam-a) = {k * (lam - a):.6g}",
        )
    )

    zone = grid <= lam + STRICT_TOL
    zone_dev = float(
        max(
            np.max(np.abs(fv[zone])),
            np.max(np.abs(gv[zone])),
            np.max(np.abs(kv[zone] - k)),
        )
    )
    entries.append(
        ConditionEntry("disengage_zone", zone_dev <= STRICT_TOL, -zone_dev, "f=g=0, kappa=k on [a,lam]")
    )

    return ConditionReport(entries, {"v_max": float(v_max), "k": float(k)})


# ---------------------------------------------------------------------------
# ring-road quantities
# ---------------------------------------------------------------------------


def cyclic_difference_min_eigenvalue(n):
    """Smallest of sum (x_i - x_{i-1})^2 over cyclic unit vectors with zero mean.

    Equals min_{1<=j<=n-1} 2 - 2 cos(2 pi j / n); e.g. 4, 3, 2 for n = 2, 3, 4.
    """
    if n < 2:
        raise ValueError("need at least 2 vehicles on a ring")
    vals = []
    for j in range(1, n):
        if (4 * j) % n == 0:
            # quarter-turn angles: cos is exactly 1, 0, -1, 0 there, but the
            # rounded float angle pi/2 is not; e.g. n = 4 must give exactly 2
            c = (1.0, 0.0, -1.0, 0.0)[(4 * j // n) % 4]
        else:
            c = math.cos(2.0 * math.pi * j / n)
        vals.append(2.0 - 2.0 * c)
    return float(min(vals))


def check_ring_sector_condition(policy, ring_length, n, p, M, grid_points=10_000):
    """Check the ring-road sector bound |V(s) - v* - p (s - s*)| <= M |s - s*|.

    s* = L/n and v* = V(s*).  The scan runs over the reachable gap interval
    [a, L - (n-1) a]; at s = s* the difference quotient is replaced by its
    limit |g(s*) - p|.  Also verifies the margin requirement M < p mu_n / 4
    with mu_n the cyclic-difference eigenvalue.

    Returns a ConditionReport with constants s_star, v_star, mu_n,
    worst_ratio and limit_ratio.
    """
    if ring_length <= n * policy.lam:
        raise ValueError(
            f"ring length {ring_length} must exceed n*lam = {n * policy.lam};"
            " otherwise the equilibrium gap sits in the disengaged zone"
        )
    s_star = ring_length / n
    v_star = policy.speed(s_star)
    mu = cyclic_difference_min_eigenvalue(n)
    hi = ring_length - (n - 1) * policy.a
    grid = np.linspace(policy.a, hi, grid_points)
    grid = np.unique(np.concatenate([grid, np.asarray(policy.knots), [s_star, hi]]))
    grid = grid[(grid >= policy.a) & (grid <= hi)]

    ds = grid - s_star
    dev = policy.speed(grid) - v_star - p * ds
    near = np.abs(ds) < 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(near, 0.0, np.abs(dev) / np.abs(ds))
    limit_ratio = abs(policy.gain(s_star) - p)
    worst = float(max(np.max(ratio), limit_ratio))

    entries = [
        ConditionEntry(
            "slope_band_feasible",
            M < p * mu / 4.0,
            p * mu / 4.0 - M,
            f"M = {M:.6g} vs p*mu_n/4 = {p * mu / 4.0:.6g}",
        ),
        ConditionEntry(
            "sector_band",
            worst <= M + STRICT_TOL,
            M - worst,
            f"sup ratio = {worst:.6g} on [{policy.a:.6g}, {hi:.6g}]",
        ),
    ]
    return ConditionReport(
        entries,
        {
            "s_star": float(s_star),
            "v_star": float(v_star),
            "mu_n": float(mu),
            "worst_ratio": worst,
            "limit_ratio": float(limit_ratio),
        },
    )
