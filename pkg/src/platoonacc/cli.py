"""Command-line entry point for batch platoon runs.

Subcommands:
  run        simulate a scenario file, monitor it, run its requested
             certificate checks, write trajectory CSV + report
  reproduce  run a built-in benchmark scenario (or "all") and judge its
             expected outcome
  fd         write the fundamental diagram of a scenario's controller
  validate   check a scenario file and its gain curve without simulating
  analyze    re-run monitoring and certificate checks on a trajectory CSV

Exit codes: 0 all good; 2 safety violation; 3 a certificate check or an
expected outcome failed; 4 bad configuration.  Output files go to --out,
else $PLATOON_OUT_DIR, else ./platoon_out.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, load_config
from .controllers import NonlinearGapController
from .csvio import read_trajectory_csv, write_trajectory_csv
from .safety import monitor_trajectory, safe_set_slacks
from .scenarios import (
    BUILTIN_NAMES,
    builtin_config,
    default_v_star,
    expectations_for,
    monitor_params,
    run_config,
)
from .spacing import check_gain_conditions, check_ring_sector_condition

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_CHECK_FAILED = 3
EXIT_CONFIG = 4


def _out_dir(args):
    path = args.out or os.environ.get("PLATOON_OUT_DIR") or "platoon_out"
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _phi_column(traj, params):
    """Barrier value per sample, nan wherever the state is outside the set."""
    slacks = safe_set_slacks(traj.s, traj.v, traj.v0, params)
    terms = np.stack(list(slacks.values()))  # (4, m, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.sum(1.0 / terms, axis=(0, -1))
    phi[np.any(terms <= 0.0, axis=(0, -1))] = np.nan
    return phi


def _lyapunov_column(cfg, traj, policy, controller):
    """Lyapunov value per sample when the run supports one, else None."""
    if not isinstance(controller, NonlinearGapController):
        return None
    k = controller.k
    if cfg.topology == "ring":
        if "p" not in cfg.analysis or "M" not in cfg.analysis:
            return None
        c_min, _ = analysis.ring_weight_feasibility(
            policy, k, cfg.analysis["p"], cfg.analysis["M"], cfg.n
        )
        c = cfg.analysis.get("c", 2.0 * c_min)
        return analysis.lyapunov_values_ring(traj, policy, c, cfg.ring_length / cfg.n)
    if cfg.leader.get("profile") != "constant":
        return None
    v_star = default_v_star(cfg, policy)
    cfg_l = analysis.LyapunovConfig(c=cfg.analysis.get("c", 1.0))
    return analysis.lyapunov_values_open(traj, policy, k, v_star, cfg_l)


def _certificate_checks(cfg, traj, policy, controller):
    """Run the checks requested in [analysis]; returns a list of CheckReports."""
    checks = cfg.analysis.get("checks", ())
    if not checks:
        return []
    if not isinstance(controller, NonlinearGapController):
        raise ConfigError("certificate checks apply to the nonlinear gap controller only")
    k = controller.k
    reports = []
    if "string" in checks or "lyapunov" in checks:
        v_star = default_v_star(cfg, policy)
    if "string" in checks:
        q_grid = cfg.analysis.get("q_grid", analysis.Q_GRID_DEFAULT)
        params = analysis.StringStabilityParams.from_policy(policy, v_star, q_grid)
        reports.append(analysis.l2_string_check(traj, params, policy, k))
        reports.append(analysis.g_manifold_l2_check(traj, params, policy, k))
        reports.append(analysis.linf_string_check(traj, params, policy))
    if "contraction" in checks:
        reports.append(analysis.manifold_contraction_check(traj, policy, k))
    if "lyapunov" in checks:
        if cfg.topology == "ring":
            if "p" not in cfg.analysis or "M" not in cfg.analysis:
                raise ConfigError("the ring lyapunov check needs p and M in [analysis]")
            reports.append(
                analysis.lyapunov_ring(
                    traj,
                    policy,
                    k,
                    cfg.analysis.get("c"),
                    cfg.analysis["p"],
                    cfg.analysis["M"],
                    cfg.ring_length,
                    cfg.n,
                )
            )
        else:
            cfg_l = analysis.LyapunovConfig(c=cfg.analysis.get("c", 1.0))
            try:
                reports.append(analysis.lyapunov_open_road(traj, policy, k, cfg_l, v_star))
            except ValueError as exc:
                raise ConfigError(f"lyapunov check not applicable: {exc}") from exc
    return reports


def _write_run_outputs(cfg, traj, safety_report, check_reports, out_dir, extra_lines=()):
    policy = cfg.build_policy()
    controller = cfg.build_controller(policy)
    params, _ = monitor_params(cfg, policy, controller)
    phi = _phi_column(traj, params)
    lyap = _lyapunov_column(cfg, traj, policy, controller)
    csv_path = out_dir / f"{cfg.name}_traj.csv"
    write_trajectory_csv(traj, csv_path, phi=phi, lyapunov=lyap)

    lines = [f"scenario: {cfg.name}", ""]
    lines += list(extra_lines)
    lines.append("-- safety --")
    lines.append(safety_report.to_text())
    for report in check_reports:
        lines.append("")
        lines.append(report.to_text())
    report_path = out_dir / f"{cfg.name}_report.txt"
    report_path.write_text("\n".join(lines) + "\n")
    return csv_path, report_path


def _execute(cfg, out_dir):
    """Shared run/reproduce core: simulate, monitor, check, write files."""
    traj = run_config(cfg, validate=False)
    policy = cfg.build_policy()
    controller = cfg.build_controller(policy)
    params, physical_only = monitor_params(cfg, policy, controller)
    safety_report = monitor_trajectory(traj, params, physical_only=physical_only)
    check_reports = _certificate_checks(cfg, traj, policy, controller)
    return traj, safety_report, check_reports


def cmd_run(args):
    try:
        cfg = load_config(args.config)
        out_dir = _out_dir(args)
        traj, safety_report, check_reports = _execute(cfg, out_dir)
        csv_path, report_path = _write_run_outputs(
            cfg, traj, safety_report, check_reports, out_dir
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {csv_path} and {report_path}")
    if not safety_report.passed:
        fv = safety_report.first_violation
        print(f"safety violation: {fv.family} (vehicle {fv.vehicle}) at t={fv.t:.6g}")
        return EXIT_VIOLATION
    print("no safety violation")
    failed = [rep.name for rep in check_reports if not rep.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    if check_reports:
        print(f"all {len(check_reports)} requested checks passed")
    return EXIT_OK


def cmd_reproduce(args):
    names = list(BUILTIN_NAMES) if args.name == "all" else [args.name]
    try:
        configs = [builtin_config(name) for name in names]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _out_dir(args)

    all_met = True
    for cfg in configs:
        traj, safety_report, check_reports = _execute(cfg, out_dir)
        lines = ["-- expected outcome --"]
        for label, fn in expectations_for(cfg.name, cfg):
            ok, detail = fn(traj)
            all_met = all_met and ok
            status = "reproduced" if ok else "NOT REPRODUCED"
            lines.append(f"{label}: {status} ({detail})")
            print(f"{cfg.name}: {label}: {status} ({detail})")
        failed_checks = [rep.name for rep in check_reports if not rep.passed]
        if failed_checks:
            all_met = False
            print(f"{cfg.name}: failed certificate checks: {', '.join(failed_checks)}")
        lines.append("")
        cfg.save(out_dir / f"{cfg.name}_config.ini")
        _write_run_outputs(cfg, traj, safety_report, check_reports, out_dir, lines)
    return EXIT_OK if all_met else EXIT_CHECK_FAILED


def cmd_fd(args):
    try:
        cfg = load_config(args.config)
        policy = cfg.build_policy()
        controller = cfg.build_controller(policy)
        model = policy if isinstance(controller, NonlinearGapController) else controller
        a = policy.a if policy is not None else None
        jam = 1.0 / a if a is not None else 1.0
        lo = args.rho_min if args.rho_min is not None else 1e-3 * jam
        hi = args.rho_max if args.rho_max is not None else 0.999 * jam
        rho = np.linspace(lo, hi, args.points)
        v_max = cfg.speed_limit
        if v_max is None and policy is not None:
            v_max = policy.v_max
        curve = analysis.fundamental_diagram(model, rho, v_max=v_max, a=a)
        stability = analysis.macroscopic_stability_check(
            model, (lo, hi), v_max=v_max, a=a
        )
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _out_dir(args)
    path = out_dir / f"{cfg.name}_fd.csv"
    curve.write_csv(path)
    print(f"wrote {path}")
    print(stability.to_text())
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg = load_config(args.config)
        policy = cfg.build_policy()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{cfg.name}: config ok")
    if policy is None:
        print("no [policy] section; nothing further to validate")
        return EXIT_OK
    k = cfg.controller.get("k")
    report = check_gain_conditions(policy, k)
    print(report.to_text())
    ok = report.passed
    if cfg.topology == "ring" and {"p", "M"} <= set(cfg.analysis):
        ring_report = check_ring_sector_condition(
            policy, cfg.ring_length, cfg.n, cfg.analysis["p"], cfg.analysis["M"]
        )
        print(ring_report.to_text())
        ok = ok and ring_report.passed
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_analyze(args):
    try:
        cfg = load_config(args.config)
        traj = read_trajectory_csv(args.trajectory)
        if traj.n != cfg.n:
            raise ConfigError(
                f"trajectory has {traj.n} vehicles but the config says {cfg.n}"
            )
        policy = cfg.build_policy()
        controller = cfg.build_controller(policy)
        params, physical_only = monitor_params(cfg, policy, controller)
        safety_report = monitor_trajectory(traj, params, physical_only=physical_only)
        check_reports = _certificate_checks(cfg, traj, policy, controller)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(safety_report.to_text())
    for report in check_reports:
        print(report.to_text())
    if not safety_report.passed:
        return EXIT_VIOLATION
    if any(not rep.passed for rep in check_reports):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="platoonacc",
        description="Simulate vehicle platoons and verify controller certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("config", help="scenario file (INI)")
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("reproduce", help="run a built-in benchmark scenario")
    p_rep.add_argument("name", choices=BUILTIN_NAMES + ("all",))
    p_rep.add_argument("--out", help="output directory")
    p_rep.set_defaults(func=cmd_reproduce)

    p_fd = sub.add_parser("fd", help="fundamental diagram of a scenario's controller")
    p_fd.add_argument("config", help="scenario file (INI)")
    p_fd.add_argument("--rho-min", type=float, default=None, help="low density [veh/m]")
    p_fd.add_argument("--rho-max", type=float, default=None, help="high density [veh/m]")
    p_fd.add_argument("--points", type=int, default=501)
    p_fd.add_argument("--out", help="output directory")
    p_fd.set_defaults(func=cmd_fd)

    p_val = sub.add_parser("validate", help="check a scenario file without simulating")
    p_val.add_argument("config", help="scenario file (INI)")
    p_val.set_defaults(func=cmd_validate)

    p_ana = sub.add_parser("analyze", help="re-run checks on a trajectory CSV")
    p_ana.add_argument("trajectory", help="trajectory CSV from a previous run")
    p_ana.add_argument("config", help="scenario file that produced it")
    p_ana.add_argument("--out", help="output directory")
    p_ana.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
