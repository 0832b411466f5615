"""Fundamental-diagram sweep: how the gain plateau shapes road capacity.

Each ramp-plateau policy induces a macroscopic flow curve Q(rho) =
rho V(1/rho) [veh/s vs veh/m].  Sweeping the plateau height g_max with the
other knots fixed shows the trade-off: higher g_max raises the free-flow
speed and the capacity peak, but the whole family respects the hard cap
Q <= rho v_max and flow always collapses at high density (the decreasing
branch).  A constant-time-gap line Q = g (1 - rho r) is printed alongside:
it crosses above the cap at low density, which is why that law can demand
speeds past the limit.

Writes one CSV per policy (columns rho, v, Q, rho_vmax) to --out-dir.
"""

import argparse
import os

import numpy as np

from platoonacc import (
    ConstantTimeGapController,
    RampPlateauPolicy,
    fundamental_diagram,
    macroscopic_stability_check,
)


def describe(policy, rho):
    """Flow curve plus the headline numbers for one policy."""
    curve = fundamental_diagram(policy, rho)
    stab = macroscopic_stability_check(policy, (float(rho[0]), float(rho[-1])))
    peak = int(np.argmax(curve.q))
    crossover = stab.crossovers[0] if stab.crossovers else float("nan")
    cap_ok = bool(np.all(curve.q <= curve.speed_cap + 1e-12))
    return curve, {
        "v_max": policy.v_max,
        "q_peak": float(curve.q[peak]),
        "rho_peak": float(curve.rho[peak]),
        "crossover": crossover,
        "cap_ok": cap_ok,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--g-max", type=float, nargs="+", default=[0.4, 0.6, 0.8, 1.0],
                    help="plateau heights to sweep [1/s]")
    ap.add_argument("--points", type=int, default=400, help="densities per curve")
    ap.add_argument("--out-dir", default=".", help="directory for the CSVs")
    args = ap.parse_args()

    a, lam, gamma = 5.0, 30.5, 55.0
    rho = np.linspace(1e-4, 0.999 / a, args.points)

    print(f"ramp-plateau family: a={a} m, ramp at {lam} m, tail knot {gamma} m")
    print(f"{'g_max [1/s]':>12}{'v_max [m/s]':>13}{'peak Q [veh/s]':>16}"
          f"{'at rho [veh/m]':>16}{'crossover':>11}  Q <= rho v_max")
    for g_max in args.g_max:
        policy = RampPlateauPolicy(a=a, lam=lam, gamma=gamma, g_max=g_max)
        curve, row = describe(policy, rho)
        print(f"{g_max:>12.2f}{row['v_max']:>13.2f}{row['q_peak']:>16.4f}"
              f"{row['rho_peak']:>16.4f}{row['crossover']:>11.4f}  "
              f"{'yes' if row['cap_ok'] else 'NO'}")
        path = os.path.join(args.out_dir, f"flow_gmax_{g_max:g}.csv")
        curve.write_csv(path)

    # the time-gap law calibrated to the g_max = 1 policy's speed range
    v_cap = RampPlateauPolicy(a=a, lam=lam, gamma=gamma, g_max=1.0).v_max
    ctg = ConstantTimeGapController(k=1.2, g=1.0, r=31.0)
    ctg_curve = fundamental_diagram(ctg, rho, v_max=v_cap, a=a)
    ctg_stab = macroscopic_stability_check(ctg, (float(rho[0]), float(rho[-1])),
                                           v_max=v_cap, a=a)
    over = ctg_curve.q > ctg_curve.speed_cap
    print()
    print(f"time-gap line (g=1.0 1/s, r=31 m) against the same cap v_max={v_cap:.2f}:")
    if np.any(over):
        print(f"  exceeds rho v_max for rho < {rho[over].max():.4f} veh/m "
              f"({np.count_nonzero(over)} of {len(rho)} grid densities)")
    print(f"  {ctg_stab.to_text().splitlines()[0]}")
    path = os.path.join(args.out_dir, "flow_ctg.csv")
    ctg_curve.write_csv(path)
    print(f"wrote {len(args.g_max) + 1} CSVs to {args.out_dir}")


if __name__ == "__main__":
    main()
