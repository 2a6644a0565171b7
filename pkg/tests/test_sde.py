import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_ex1
from exitrate import (BoundarySection, DomainSpec, MultiChannelSystem, SimParams,
                      empirical_rate, estimate_exit_probability, estimate_terminal_functional,
                      evaluate_exit_control_cost, exit_location_histogram, penalty_terminal_cost,
                      simulate_exits, simulate_trajectory)
from exitrate.action import minimize_action_fixed, path_action
from exitrate.errors import EmptySampleError, HorizonError, SimulationError
from exitrate.sde import INFINITE_RATE, concentration, exit_stats
from oracles import scale_hit_upper

IV = DomainSpec.interval(-1, 1, sections=(BoundarySection.ball("right", [1.0]),
                                          BoundarySection.ball("left", [-1.0])))


def scalar(drift, sigma=1.0):
    return MultiChannelSystem.build([[drift]], [[[1.0]]], [[[0.0]]], [[sigma]])


def test_sim_params_validation():
    with pytest.raises(ValueError):
        SimParams(eps=0.0)
    with pytest.raises(ValueError):
        SimParams(eps=1.0, dt=1.0, t_max=0.5)
    with pytest.raises(ValueError):
        SimParams(eps=1.0, seed=-1)
    assert SimParams(eps=1.0).horizon(make_ex1(), 1) == pytest.approx(100.0)


def test_constant_path_is_censored():
    sys = scalar(0.0, sigma=0.0)
    path, ev = simulate_trajectory(sys, 0, [0.5], IV, SimParams(eps=1.0, dt=0.01, t_max=1.0))
    assert ev.censored and not ev.exited
    np.testing.assert_allclose(path.states[:, 0], 0.5)


def test_deterministic_outward_exit_time():
    dt = 1e-3
    sys = scalar(2.0, sigma=0.0)
    path, ev = simulate_trajectory(sys, 0, [0.5], IV, SimParams(eps=1.0, dt=dt, t_max=5.0))
    assert ev.exited and ev.y[0] == pytest.approx(1.0)
    assert abs(ev.tau - math.log(2) / 2) <= dt
    assert path.times[-1] == ev.tau


def test_nonfinite_state_raises_with_trial():
    sys = scalar(1e6, sigma=0.0)
    big = DomainSpec.interval(-1e308, 1e308)
    with pytest.raises(SimulationError) as info:
        simulate_trajectory(sys, 0, [0.5], big, SimParams(eps=1.0, dt=1.0, t_max=1e4),
                            trial_index=3)
    assert info.value.trial == 3


def test_trajectory_matches_batch_trial(ex1):
    p = SimParams(eps=0.25, dt=1e-3, trials=8, seed=5)
    s = simulate_exits(ex1, 1, [0.0], IV, p)
    for i in (0, 7):
        _, ev = simulate_trajectory(ex1, 1, [0.0], IV, p, trial_index=i)
        assert ev.tau == s.tau[i]
        np.testing.assert_array_equal(ev.y, s.y[i])


def test_worker_count_does_not_change_results(ex1):
    p = SimParams(eps=0.25, dt=1e-3, trials=3000, seed=11)
    a = simulate_exits(ex1, 1, [0.0], IV, p, workers=1)
    b = simulate_exits(ex1, 1, [0.0], IV, p, workers=4)
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.status, b.status)


def test_exit_points_on_boundary(ex2):
    disk = DomainSpec.ball([0, 0], 1.0)
    s = simulate_exits(ex2, 0, [0.0, 0.0], disk, SimParams(eps=0.5, dt=0.01, trials=500))
    assert np.all(np.abs(disk.signed_distance(s.exit_points)) <= 1e-9)


def test_exit_probability_matches_scale_function(ex1):
    p = SimParams(eps=0.25, dt=2.5e-4, trials=20000, seed=1)
    st_ = estimate_exit_probability(ex1, 1, [-0.5], IV, IV.section("right"), p)
    q = scale_hit_upper(-0.5, 0.5, 0.25)
    assert abs(st_.q_hat - q) <= 3 * st_.ci95


def test_symmetric_half_and_partition(ex1):
    p = SimParams(eps=0.5, dt=1e-3, trials=20000, seed=2)
    s = simulate_exits(ex1, 0, [0.0], IV, p)
    r = exit_stats(s, IV, IV.section("right"))
    l_ = exit_stats(s, IV, IV.section("left"))
    assert abs(r.q_hat - 0.5) <= 3 * r.ci95
    assert r.q_hat + l_.q_hat + r.censored_fraction == pytest.approx(1.0, abs=1e-12)
    assert r.ci95 == pytest.approx(1.96 * math.sqrt(r.q_hat * (1 - r.q_hat) / r.trials))


def test_full_boundary_exits_almost_surely(ex1):
    p = SimParams(eps=0.5, dt=1e-3, t_max=200.0, trials=2000, seed=3)
    st_ = estimate_exit_probability(ex1, 0, [0.0], IV, BoundarySection.full(), p)
    assert st_.q_hat == pytest.approx(1.0 - st_.censored_fraction)
    assert st_.q_hat > 0.99


def test_censoring_over_limit_raises(ex1):
    p = SimParams(eps=0.05, dt=1e-2, t_max=0.5, trials=200)
    with pytest.raises(HorizonError):
        estimate_exit_probability(ex1, 0, [0.0], IV, IV.section("right"), p)


def test_empirical_rate_examples():
    assert empirical_rate(math.exp(-2), 0.5) == pytest.approx(1.0)
    assert empirical_rate(1.0, 0.3) == 0.0
    assert empirical_rate(0.374, 0.25) == pytest.approx(0.2459, abs=5e-5)
    assert empirical_rate(0.0, 0.25) == INFINITE_RATE


@settings(deadline=None, max_examples=50)
@given(q=st.floats(1e-300, 1.0), eps=st.floats(1e-3, 10.0))
def test_empirical_rate_nonnegative(q, eps):
    assert empirical_rate(q, eps) >= 0.0


def test_histogram_1d_concentration(ex1):
    s = simulate_exits(ex1, 1, [0.0], IV, SimParams(eps=0.5, dt=1e-3, trials=500))
    h = exit_location_histogram(ex1, 1, [0.0], IV, None, sigma_points=[[-1.0], [1.0]],
                                delta=0.0, sample=s)
    assert h.concentration == 1.0
    assert h.counts.sum() == 500


def test_histogram_empty_sample_raises(ex1):
    p = SimParams(eps=0.01, dt=1e-2, t_max=0.1, trials=10)
    with pytest.raises(EmptySampleError):
        exit_location_histogram(ex1, 0, [0.0], IV, p)


def test_deterministic_exit_mass_at_east():
    sys = MultiChannelSystem.build(np.diag([1.0, -1.0]), [np.ones((2, 1))], [np.zeros((1, 2))],
                                   1e-4 * np.eye(2))
    disk = DomainSpec.ball([0, 0], 1.0)
    s = simulate_exits(sys, 0, [0.1, 0.0], disk, SimParams(eps=1e-4, dt=1e-3, trials=200))
    assert concentration(disk, s.exit_points, [[1.0, 0.0]], 1e-3) == 1.0


def test_concentration_increases_as_noise_shrinks(ex2):
    disk = DomainSpec.ball([0, 0], 1.0)
    frac = []
    for eps in (0.4, 0.2):
        s = simulate_exits(ex2, 0, [0, 0], disk, SimParams(eps=eps, dt=0.02, t_max=1e4,
                                                           trials=10000, seed=4))
        frac.append(concentration(disk, s.exit_points, [[1, 0], [-1, 0]], 0.5))
    assert frac[1] > frac[0]


def test_terminal_functional_constant_costs(ex1):
    p = SimParams(eps=0.25, dt=1e-3, trials=500)
    zero = estimate_terminal_functional(ex1, 1, [0.0], IV, lambda y: np.zeros(len(y)), p)
    assert zero.f_hat == 1.0 and zero.J_hat == 0.0
    c = 0.7
    const = estimate_terminal_functional(ex1, 1, [0.0], IV, lambda y: np.full(len(y), c), p)
    assert const.J_hat == pytest.approx(c, rel=1e-12)
    assert const.f_hat == pytest.approx(math.exp(-c / 0.25), rel=1e-12)


def test_terminal_functional_two_point_reduction(ex1):
    eps, M = 0.25, 10.0
    p = SimParams(eps=eps, dt=2.5e-4, trials=20000, seed=8)
    phi = penalty_terminal_cost(IV.section("right"), M)
    est = estimate_terminal_functional(ex1, 1, [-0.5], IV, phi, p)
    q = scale_hit_upper(-0.5, 0.5, eps)
    ref = -eps * math.log(q + (1 - q) * math.exp(-4 * M / eps))
    assert abs(est.J_hat - ref) <= 3 * est.se_J


def test_control_cost_uncontrolled_drift(ex1):
    p = SimParams(eps=0.25, dt=2e-3, trials=1000, seed=6)
    phi = lambda y: np.where(y[:, 0] > 0, 0.0, 1.0)
    est = evaluate_exit_control_cost(lambda t, X: X @ ex1.drift_matrix(1).T, ex1, 1, [0.0],
                                     IV, phi, p)
    assert est.running == pytest.approx(0.0, abs=1e-12)
    s = simulate_exits(ex1, 1, [0.0], IV, p)
    assert est.terminal == pytest.approx(np.mean(phi(s.y)), abs=1e-12)


def test_control_cost_deterministic_limit_equals_action(ex1):
    T, N = 2.0, 400
    res = minimize_action_fixed(ex1, 1, [0.0], [1.0], T, N=N)
    path = res.path
    vel = np.diff(path.states[:, 0]) / np.diff(path.times)

    def follow(t, X):
        k = min(int(round(t / (T / N))), N - 1)
        return np.full((len(X), 1), vel[k])

    quiet = ex1.with_diffusion(ex1.diffusion.__class__.constant([[1e-12]]))
    p = SimParams(eps=1e-12, dt=T / N, t_max=4 * T, trials=2)

    # the mode-1 Lagrangian with unit diffusion; the quiet system only removes noise
    lag = lambda X, V: 0.5 * (V[:, 0] + 0.5 * X[:, 0]) ** 2
    est = evaluate_exit_control_cost(follow, quiet, 1, [0.0], IV, lambda y: np.zeros(len(y)), p,
                                     running_cost=lag)
    assert est.J_hat == pytest.approx(path_action(ex1, 1, path), rel=0.02)


def test_control_cost_zero_velocity_nonnegative(ex1):
    p = SimParams(eps=0.25, dt=2e-3, t_max=20.0, trials=300, seed=9)
    est = evaluate_exit_control_cost(lambda t, X: np.zeros_like(X), ex1, 1, [0.0], IV,
                                     lambda y: np.zeros(len(y)), p)
    assert est.J_hat >= 0 and est.terminal == 0.0
