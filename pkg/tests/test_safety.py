"""Safe-set, barrier, and invariance-monitoring tests."""

import numpy as np
import pytest

from platoonacc import (
    BoundaryError,
    NonlinearGapController,
    PlatoonState,
    SafetyParams,
    barrier,
    barrier_bound,
    in_safe_set,
    monitor_trajectory,
    run_invariance_study,
    safe_set_slacks,
    sample_safe_ring_states,
    sample_safe_states,
    simulate,
    write_slack_csv,
)
from platoonacc.safety import FAMILIES, PHYSICAL_GAP_FAMILY

from conftest import RING


@pytest.fixture(scope="module")
def ring_params():
    from platoonacc import RampPlateauPolicy

    policy = RampPlateauPolicy(a=RING["a"], lam=RING["lam"], gamma=RING["gamma"], g_max=RING["g_max"])
    return SafetyParams.from_policy(policy, k=RING["k"])


def test_params_from_policy(ring_params):
    assert ring_params.a == 5.0
    assert abs(ring_params.v_max - 3.3202) <= 1e-12
    assert abs(ring_params.r_margin - (7.1 - 5.0 - 3.3202 / 2.0)) <= 1e-12


def test_slack_hand_values(ring_params):
    slacks = safe_set_slacks(np.array([7.0, 6.0]), np.array([2.5, 0.5]), 2.0, ring_params)
    assert np.allclose(slacks["speed_low"], [2.5, 0.5], atol=1e-15)
    assert np.allclose(slacks["speed_high"], [3.3202 - 2.5, 3.3202 - 0.5], atol=1e-12)
    # vehicle 1 closes on its leader at 0.5 m/s: reaction term 0.5 / k = 0.25
    assert np.allclose(slacks["gap"], [7.0 - 5.0 - 0.25, 1.0], atol=1e-15)
    assert np.allclose(slacks[PHYSICAL_GAP_FAMILY], [2.0, 1.0], atol=1e-15)


def test_in_safe_set_families(ring_params):
    inside, mins = in_safe_set(np.array([7.0, 6.0]), np.array([2.5, 0.5]), 2.0, ring_params)
    assert inside
    assert set(mins) == set(FAMILIES)
    # zero speed sits on the boundary: not strictly inside
    inside, mins = in_safe_set(np.array([7.0, 6.0]), np.array([2.5, 0.0]), 2.0, ring_params)
    assert not inside
    assert mins["speed_low"] == 0.0


def test_barrier_equilibrium_oracle(ring_params):
    s_star, v_star = 10.75, 0.9152
    phi = barrier(np.full(4, s_star), np.full(4, v_star), v_star, ring_params)
    expect = 4.0 * (2.0 / 5.75 + 1.0 / 0.9152 + 1.0 / (3.3202 - 0.9152))
    assert abs(phi - expect) <= 1e-12
    assert abs(phi - 7.4251) <= 5e-4


def test_barrier_raises_on_boundary(ring_params):
    with pytest.raises(BoundaryError):
        barrier(np.array([10.0]), np.array([0.0]), 1.0, ring_params)
    with pytest.raises(BoundaryError):
        barrier(np.array([5.0]), np.array([1.0]), 1.0, ring_params)
    with pytest.raises(BoundaryError):
        barrier(np.array([10.0]), np.array([ring_params.v_max + 0.1]), 1.0, ring_params)


def test_barrier_bound_formula(ring_params):
    phi0 = 7.4251
    t = 0.5
    r = ring_params.r_margin
    growth = np.exp(ring_params.k * t)
    expect = growth * phi0 + 4 * ring_params.v_max / (ring_params.k * r * r) * (growth - 1.0)
    assert abs(barrier_bound(phi0, t, 4, ring_params) - expect) <= 1e-12
    assert barrier_bound(phi0, 0.0, 4, ring_params) == phi0


def test_barrier_bound_needs_positive_margin():
    params = SafetyParams(a=5.0, k=1.2, v_max=32.1, lam=30.5, r_margin=30.5 - 5.0 - 32.1 / 1.2)
    assert params.r_margin < 0.0
    with pytest.raises(ValueError):
        barrier_bound(1.0, 0.5, 5, params)


def test_barrier_bound_holds_along_ring_run(scenario, ring_params):
    _, traj = scenario("ring")
    report = monitor_trajectory(traj, ring_params)
    assert report.passed
    assert report.first_violation is None
    assert report.phi_max_ratio is not None
    assert report.phi_max_ratio <= 1.0
    assert abs(report.phi_window - 5.0 / RING["k"]) <= 1e-12
    assert "passed: True" in report.to_text()


def test_monitor_flags_speed_violation(scenario):
    _, traj = scenario("s1_ctg")
    params = SafetyParams(a=5.0, k=1.2, v_max=30.1)
    report = monitor_trajectory(traj, params, physical_only=True)
    assert not report.passed
    fv = report.first_violation
    assert fv.family == "speed_high"
    assert fv.vehicle == 5
    assert 0.0 < fv.t < 10.0
    assert "first_violation" in report.to_text()


def test_monitor_notes_missing_margin(scenario):
    _, traj = scenario("s1_nl")
    params = SafetyParams(a=5.0, k=1.2, v_max=32.1, lam=30.5, r_margin=30.5 - 5.0 - 32.1 / 1.2)
    report = monitor_trajectory(traj, params)
    assert report.passed
    assert report.phi_max_ratio is None
    assert any("residual margin" in note for note in report.notes)


def test_write_slack_csv_round_trip(tmp_path, ring_params):
    from platoonacc import RampPlateauPolicy

    policy = RampPlateauPolicy(a=RING["a"], lam=RING["lam"], gamma=RING["gamma"], g_max=RING["g_max"])
    ctrl = NonlinearGapController(policy, k=RING["k"])
    initial = PlatoonState(s=[10.0, 11.0, 12.0, 10.0], v=[0.8, 1.5, 1.25, 0.75])
    traj = simulate(ctrl, initial, topology="ring", dt=1e-3, horizon=1.0, output_stride=100)

    path = tmp_path / "slacks.csv"
    write_slack_csv(traj, ring_params, path)
    table = np.genfromtxt(path, delimiter=",", names=True)
    assert len(table.dtype.names) == 1 + 4 * traj.n
    slacks = safe_set_slacks(traj.s, traj.v, traj.v0, ring_params)
    assert np.max(np.abs(table["gap_2"] - slacks["gap"][:, 1])) == 0.0
    assert np.max(np.abs(table["speed_high_4"] - slacks["speed_high"][:, 3])) == 0.0

    second = tmp_path / "again.csv"
    write_slack_csv(traj, ring_params, second)
    assert path.read_bytes() == second.read_bytes()


def test_sample_safe_states_inside(ring_params, rng):
    s, v = sample_safe_states(rng, 50, 4, ring_params, v0_init=1.0)
    assert s.shape == v.shape == (50, 4)
    inside, _ = in_safe_set(s, v, np.full(50, 1.0), ring_params)
    assert inside


def test_sample_safe_ring_states_inside(ring_params, rng):
    s, v = sample_safe_ring_states(rng, 50, 4, ring_params, ring_length=43.0)
    assert np.max(np.abs(s.sum(axis=1) - 43.0)) <= 1e-9
    inside, _ = in_safe_set(s, v, v[:, -1], ring_params)
    assert inside
    with pytest.raises(ValueError):
        sample_safe_ring_states(rng, 5, 4, ring_params, ring_length=20.0)


def test_invariance_study_ring_smoke(ring_params, rng):
    from platoonacc import RampPlateauPolicy

    policy = RampPlateauPolicy(a=RING["a"], lam=RING["lam"], gamma=RING["gamma"], g_max=RING["g_max"])
    ctrl = NonlinearGapController(policy, k=RING["k"])
    report = run_invariance_study(
        ctrl, ring_params, topology="ring", n=4, n_runs=8, horizon=1.0, dt=1e-3,
        ring_length=43.0, rng=np.random.default_rng(7),
    )
    assert report.passed
    assert report.violations == 0
    assert all(v > 0.0 for v in report.min_slacks.values())


def test_invariance_study_counts_exits(ring_params):
    """States sampled inside a too-small speed box must be flagged as exits."""
    from platoonacc import RampPlateauPolicy

    policy = RampPlateauPolicy(a=RING["a"], lam=RING["lam"], gamma=RING["gamma"], g_max=RING["g_max"])
    ctrl = NonlinearGapController(policy, k=RING["k"])
    shrunk = SafetyParams(a=5.0, k=2.0, v_max=1.0, lam=7.1, r_margin=7.1 - 5.0 - 0.5)
    report = run_invariance_study(
        ctrl, shrunk, topology="ring", n=4, n_runs=6, horizon=5.0, dt=1e-3,
        ring_length=60.0, rng=np.random.default_rng(3),
    )
    assert not report.passed
    assert report.violations > 0
