"""Scenario-file parsing, trajectory CSV I/O, and command-line exit codes."""

import dataclasses

import numpy as np
import pytest

from platoonacc import (
    BUILTIN_NAMES,
    ConfigError,
    ScenarioConfig,
    Trajectory,
    builtin_config,
    load_config,
    parse_config,
    read_trajectory_csv,
    write_trajectory_csv,
)
from platoonacc.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, main
from platoonacc.scenarios import monitor_params


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------


def test_builtin_configs_round_trip():
    for name in BUILTIN_NAMES:
        cfg = builtin_config(name)
        text = cfg.to_ini()
        back = parse_config(text)
        back.validate()
        assert back.to_ini() == text
        assert back.name == cfg.name
        assert back.s0 == cfg.s0 and back.v0 == cfg.v0
        assert back.analysis == cfg.analysis


def test_float_serialization_is_exact():
    cfg = builtin_config("ring")
    tweaked = dataclasses.replace(cfg, dt=1.0 / 3.0, s0=(10.1, 11.3, 11.6, 10.0))
    back = parse_config(tweaked.to_ini())
    assert back.dt == tweaked.dt
    assert back.s0 == tweaked.s0


def test_piecewise_leader_round_trip():
    cfg = builtin_config("s2_nl")
    leader = {
        "profile": "piecewise_exp",
        "v_init": 27.0,
        "segments": ((5.0, 10.0, 0.9), (40.0, 20.0, 1.0 / 7.0)),
    }
    tweaked = dataclasses.replace(cfg, leader=leader)
    back = parse_config(tweaked.to_ini())
    back.validate()
    assert back.leader["segments"] == leader["segments"]
    profile = back.build_leader()
    assert profile.speed(0.0)[0] == 27.0


def test_parse_rejects_unknown_keys():
    text = builtin_config("ring").to_ini().replace("g_max = 0.26", "g_max = 0.26\ngmax = 1")
    with pytest.raises(ConfigError):
        parse_config(text)


def test_parse_rejects_missing_sections():
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nname = x\ntopology = ring\nn = 2\nring_length = 22\n")


def test_parse_rejects_bad_numbers():
    text = builtin_config("ring").to_ini().replace("k = 2.0", "k = fast")
    with pytest.raises(ConfigError):
        parse_config(text)


def test_validate_ring_length_consistency():
    cfg = builtin_config("ring")
    broken = dataclasses.replace(cfg, s0=(10.0, 11.0, 12.0, 11.0))  # sums to 44, not 43
    with pytest.raises(ConfigError):
        broken.validate()
    too_short = dataclasses.replace(
        cfg, ring_length=28.0, s0=(7.0, 7.0, 7.0, 7.0), allow_unsafe_start=True
    )
    with pytest.raises(ConfigError):
        too_short.validate()


def test_validate_length_mismatch():
    cfg = builtin_config("ring")
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, v0=(0.8, 1.5)).validate()


def test_validate_rejects_unknown_check():
    cfg = builtin_config("ring")
    bad = dataclasses.replace(cfg, analysis={"checks": ("string", "vibes"), "p": 0.26, "M": 0.1})
    with pytest.raises(ConfigError):
        bad.validate()


def test_validate_rejects_unsafe_start():
    cfg = builtin_config("ring")
    fast = dataclasses.replace(cfg, v0=(5.0, 5.0, 5.0, 5.0))  # above v_max = 3.32
    with pytest.raises(ConfigError):
        fast.validate()
    dataclasses.replace(fast, allow_unsafe_start=True).validate()


def test_monitor_params_modes():
    nl_cfg = builtin_config("ring")
    params, physical_only = monitor_params(nl_cfg, nl_cfg.build_policy())
    assert not physical_only
    assert abs(params.v_max - 3.3202) <= 1e-12
    ctg_cfg = builtin_config("s1_ctg")
    policy = ctg_cfg.build_policy()
    params, physical_only = monitor_params(ctg_cfg, policy, ctg_cfg.build_controller(policy))
    assert physical_only
    assert params.v_max == 30.1  # posted limit, not the policy ceiling


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------


def _tiny_traj():
    t = np.array([0.0, 0.5, 1.0])
    s = np.array([[10.0, 11.0], [10.2, 10.9], [10.3, 10.8]])
    v = np.array([[0.8, 1.5], [0.9, 1.4], [1.0, 1.3]])
    u = np.zeros((3, 2))
    v0 = v[:, -1]
    return Trajectory(t=t, s=s, v=v, u=u, v0=v0)


def test_trajectory_csv_round_trip(tmp_path):
    traj = _tiny_traj()
    path = tmp_path / "run.csv"
    write_trajectory_csv(traj, path, phi=np.array([1.0, 2.0, 3.0]))
    back = read_trajectory_csv(path)
    assert np.array_equal(back.t, traj.t)
    assert np.array_equal(back.s, traj.s)
    assert np.array_equal(back.v, traj.v)
    assert np.array_equal(back.v0, traj.v0)
    assert np.array_equal(back.meta["phi"], [1.0, 2.0, 3.0])
    assert np.all(np.isnan(back.meta["lyapunov"]))


def test_trajectory_csv_deterministic_bytes(tmp_path):
    traj = _tiny_traj()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trajectory_csv(traj, a)
    write_trajectory_csv(traj, b)
    assert a.read_bytes() == b.read_bytes()


def test_trajectory_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("time,x,y\n0,1,2\n")
    with pytest.raises(ValueError):
        read_trajectory_csv(path)
    path.write_text("t,s_1,u_1,v_1,v_0,phi,V\n0,1,2,3,4,5,6\n")  # blocks out of order
    with pytest.raises(ValueError):
        read_trajectory_csv(path)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _save(cfg, tmp_path, name="scenario.ini"):
    path = tmp_path / name
    cfg.save(path)
    return str(path)


def _short_ring(horizon=5.0, checks=False):
    cfg = builtin_config("ring")
    analysis = cfg.analysis if checks else {}
    return dataclasses.replace(cfg, horizon=horizon, analysis=analysis)


def test_cli_run_clean_exit(tmp_path, capsys):
    cfg_path = _save(_short_ring(), tmp_path)
    code = main(["run", cfg_path, "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "no safety violation" in out
    assert (tmp_path / "out" / "ring_traj.csv").exists()
    assert (tmp_path / "out" / "ring_report.txt").exists()
    header = (tmp_path / "out" / "ring_traj.csv").read_text().splitlines()[0]
    assert header == "t,s_1,s_2,s_3,s_4,v_1,v_2,v_3,v_4,u_1,u_2,u_3,u_4,v_0,phi,V"


def test_cli_run_detects_violation(tmp_path, capsys):
    cfg = dataclasses.replace(builtin_config("s1_ctg"), horizon=5.0)
    code = main(["run", _save(cfg, tmp_path), "--out", str(tmp_path / "out")])
    assert code == EXIT_VIOLATION
    assert "speed_high" in capsys.readouterr().out


def test_cli_run_rejects_bad_config(tmp_path, capsys):
    text = builtin_config("ring").to_ini().replace("s = 10.0, 11.0, 12.0, 10.0", "s = 10.0, 11.0, 12.0, 11.0")
    path = tmp_path / "bad.ini"
    path.write_text(text)
    assert main(["run", str(path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_validate_exit_codes(tmp_path, capsys):
    ok_path = _save(builtin_config("ring"), tmp_path, "ring.ini")
    assert main(["validate", ok_path]) == EXIT_OK
    # the wide-tail profile violates its speed budget: flagged, exit 3
    nl_path = _save(builtin_config("s1_nl"), tmp_path, "s1.ini")
    assert main(["validate", nl_path]) == EXIT_CHECK_FAILED
    missing = str(tmp_path / "nope.ini")
    assert main(["validate", missing]) == EXIT_CONFIG
    capsys.readouterr()


def test_cli_fd_writes_curve(tmp_path, monkeypatch, capsys):
    cfg_path = _save(builtin_config("ring"), tmp_path)
    monkeypatch.setenv("PLATOON_OUT_DIR", str(tmp_path / "envdir"))
    code = main(["fd", cfg_path, "--points", "101"])
    assert code == EXIT_OK
    path = tmp_path / "envdir" / "ring_fd.csv"
    assert path.exists()
    assert path.read_text().splitlines()[0] == "rho,v,Q,rho_vmax"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (101, 4)
    assert "rho" in capsys.readouterr().out


def test_cli_fd_explicit_range(tmp_path, capsys):
    cfg_path = _save(builtin_config("s1_ctg"), tmp_path)
    code = main(
        ["fd", cfg_path, "--rho-min", "0.001", "--rho-max", "0.1", "--points", "51",
         "--out", str(tmp_path / "out")]
    )
    assert code == EXIT_OK
    table = np.loadtxt(tmp_path / "out" / "s1_ctg_fd.csv", delimiter=",", skiprows=1)
    assert table.shape == (51, 4)
    # the time-gap line crosses the cap rho v_max at low density
    assert np.any(table[:, 2] > table[:, 3])
    capsys.readouterr()


def test_cli_analyze_round_trip(scenario, tmp_path, capsys):
    cfg, traj = scenario("ring")
    cfg_path = _save(cfg, tmp_path)
    csv_path = tmp_path / "ring_traj.csv"
    write_trajectory_csv(traj, csv_path)
    assert main(["analyze", str(csv_path), cfg_path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "passed: True" in out


def test_cli_analyze_flags_tampered_certificates(scenario, tmp_path, capsys):
    cfg, traj = scenario("ring")
    cfg_path = _save(cfg, tmp_path)
    frozen = Trajectory(
        t=traj.t,
        s=traj.s,
        v=np.full_like(traj.v, 0.9152 + 0.3),  # safe speeds that never contract
        u=traj.u,
        v0=np.full_like(traj.v0, 0.9152 + 0.3),
        meta={},
    )
    csv_path = tmp_path / "frozen.csv"
    write_trajectory_csv(frozen, csv_path)
    assert main(["analyze", str(csv_path), cfg_path]) == EXIT_CHECK_FAILED
    capsys.readouterr()


def test_cli_analyze_flags_unsafe_samples(scenario, tmp_path, capsys):
    cfg, traj = scenario("ring")
    cfg_path = _save(cfg, tmp_path)
    v = traj.v.copy()
    v[100, 2] = -0.5  # a recorded reversal breaches the speed floor
    unsafe = Trajectory(t=traj.t, s=traj.s, v=v, u=traj.u, v0=traj.v0, meta={})
    csv_path = tmp_path / "unsafe.csv"
    write_trajectory_csv(unsafe, csv_path)
    assert main(["analyze", str(csv_path), cfg_path]) == EXIT_VIOLATION
    capsys.readouterr()


def test_cli_analyze_rejects_vehicle_count_mismatch(scenario, tmp_path, capsys):
    cfg, _ = scenario("ring")
    cfg_path = _save(cfg, tmp_path)
    csv_path = tmp_path / "two.csv"
    write_trajectory_csv(_tiny_traj(), csv_path)
    assert main(["analyze", str(csv_path), cfg_path]) == EXIT_CONFIG
    capsys.readouterr()


def test_cli_reproduce_single_benchmark(tmp_path, capsys):
    code = main(["reproduce", "s1_ctg", "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "reproduced" in out
    assert "NOT REPRODUCED" not in out
    for suffix in ("traj.csv", "report.txt", "config.ini"):
        assert (tmp_path / "out" / f"s1_ctg_{suffix}").exists()
    # the saved config reloads and matches the built-in
    again = load_config(tmp_path / "out" / "s1_ctg_config.ini")
    assert again.to_ini() == builtin_config("s1_ctg").to_ini()
