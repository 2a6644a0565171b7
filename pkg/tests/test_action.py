import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_ex1
from exitrate import (ActionSettings, BoundarySection, DiscretePath, DomainSpec, exit_set,
                      hamiltonian, lagrangian, minimize_action_fixed, minimize_action_free,
                      path_action, path_action_gradient, penalty_terminal_cost,
                      quasipotential_profile, rate_to_section)
from exitrate.action import optimal_velocity
from exitrate.errors import PathError, PreconditionError
from oracles import hamiltonian_grid, ou_point_action, ou_transfer_action

IV = DomainSpec.interval(-1, 1)
FAST = ActionSettings(N=200, T_grid=(1, 2, 4, 8, 16))


def test_lagrangian_examples(ex1):
    assert lagrangian(ex1, 0, [1.0], [0.0]) == pytest.approx(1.125)
    assert lagrangian(ex1, 1, [1.0], [0.0]) == pytest.approx(0.125)
    x = np.linspace(-1, 1, 7)[:, None]
    np.testing.assert_allclose(lagrangian(ex1, 0, x, x @ ex1.drift_matrix(0).T), 0.0)


def test_hamiltonian_examples(ex1):
    assert hamiltonian(ex1, 0, [0.3], [0.0]) == 0.0
    assert hamiltonian(ex1, 0, [1.0], [1.0]) == pytest.approx(-2.0)
    assert hamiltonian(ex1, 0, [1.0], [-3.0]) == pytest.approx(0.0)


@settings(deadline=None, max_examples=40)
@given(x=st.floats(-1, 1), p=st.floats(-3, 3))
def test_hamiltonian_is_legendre_dual(x, p):
    ex1 = make_ex1()
    # H(x, p) = inf_v [L + <p, v>] is attained at v* and equals the sup form with p -> -p
    v = optimal_velocity(ex1, 0, [x], [p])
    assert hamiltonian(ex1, 0, [x], [p]) == pytest.approx(
        lagrangian(ex1, 0, [x], v) + p * v[0], abs=1e-12)
    for dv in (-0.1, 0.1):
        assert lagrangian(ex1, 0, [x], v + dv) + p * (v[0] + dv) >= \
            hamiltonian(ex1, 0, [x], [p]) - 1e-12


def test_hamiltonian_grid_oracle_2d(ex2):
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, p = rng.uniform(-1, 1, 2), rng.uniform(-2, 2, 2)
        val, step = hamiltonian_grid(x, p, ex2.drift_matrix(0), np.eye(2), n=801)
        assert hamiltonian(ex2, 0, x, p) == pytest.approx(val, abs=step ** 2)


def test_path_action_straight_line(ex1):
    path = DiscretePath.uniform(1.0, np.linspace(0, 1, 401)[:, None])
    assert path_action(ex1, 0, path) == pytest.approx(1.625, rel=1e-5)


def test_path_action_zero_along_flow(ex1):
    t = np.linspace(0, 2, 401)
    path = DiscretePath(t, 0.8 * np.exp(-0.5 * t)[:, None])
    assert path_action(ex1, 1, path) <= 1e-6


def test_path_validation():
    with pytest.raises(PathError):
        DiscretePath([0.0, 0.5, 0.4], np.zeros((3, 1)))
    with pytest.raises(PathError):
        DiscretePath([0.0], np.zeros((1, 1)))


def test_gradient_matches_finite_differences(ex2):
    rng = np.random.default_rng(3)
    path = DiscretePath.uniform(1.5, rng.uniform(-0.5, 0.5, (31, 2)))
    G = path_action_gradient(ex2, 0, path)
    h = 1e-6
    for k, i in [(0, 0), (7, 1), (15, 0), (30, 1)]:
        Xp = path.states.copy()
        Xm = path.states.copy()
        Xp[k, i] += h
        Xm[k, i] -= h
        fd = (path_action(ex2, 0, DiscretePath(path.times, Xp))
              - path_action(ex2, 0, DiscretePath(path.times, Xm))) / (2 * h)
        assert G[k, i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_fixed_time_rest_at_equilibrium(ex1):
    r = minimize_action_fixed(ex1, 0, [0.0], [0.0], 3.0, N=50)
    assert r.value == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(r.path.states, 0.0, atol=1e-12)


@pytest.mark.parametrize("mode,lam,T", [(0, 1.5, 8.0), (1, 0.5, 16.0), (1, 0.5, 1.0)])
def test_fixed_time_matches_ou_action(ex1, mode, lam, T):
    r = minimize_action_fixed(ex1, mode, [0.0], [1.0], T, N=400)
    assert r.converged
    assert r.value == pytest.approx(ou_point_action(lam, 1.0, T=T), rel=0.02)


@pytest.mark.parametrize("x0", [-0.5, 0.5])
def test_free_time_transfer(ex1, x0):
    r = minimize_action_free(ex1, 1, [x0], [1.0], IV, FAST)
    assert r.value == pytest.approx(ou_transfer_action(0.5, x0, 1.0), rel=0.02)


def test_rate_to_section_symmetry_and_full(ex1):
    right = BoundarySection.ball("right", [1.0])
    left = BoundarySection.ball("left", [-1.0])
    r = rate_to_section(ex1, 1, [0.0], IV, right, FAST)
    l_ = rate_to_section(ex1, 1, [0.0], IV, left, FAST)
    full = rate_to_section(ex1, 1, [0.0], IV, BoundarySection.full(), FAST)
    assert r.value == pytest.approx(l_.value, rel=1e-6)
    assert full.value == pytest.approx(min(r.value, l_.value), rel=1e-6)
    assert full.value == pytest.approx(0.5, rel=0.02)


def test_profile_and_exit_set_1d(ex1):
    prof = quasipotential_profile(ex1, 0, IV, settings=FAST)
    np.testing.assert_allclose(prof.values, [1.5, 1.5], rtol=0.02)
    np.testing.assert_allclose(exit_set(prof, tie_tol=1e-3), [[-1.0], [1.0]])
    asym = DomainSpec.interval(-1, 2)
    prof = quasipotential_profile(ex1, 1, asym, settings=FAST)
    np.testing.assert_allclose(prof.values, [0.5, 2.0], rtol=0.02)
    np.testing.assert_allclose(exit_set(prof, tie_tol=1e-6), [[-1.0]])


def test_profile_rejects_boundary_centre(ex1):
    with pytest.raises(PreconditionError):
        quasipotential_profile(ex1, 0, IV, x_star=[1.0], settings=FAST)


def test_ex2_exit_set_on_horizontal_axis(ex2):
    disk = DomainSpec.ball([0, 0], 1.0)
    prof = quasipotential_profile(ex2, 0, disk, settings=ActionSettings(N=100,
                                                                        boundary_samples=16))
    sig = exit_set(prof)
    assert len(sig) == 2
    np.testing.assert_allclose(np.abs(sig[:, 0]), 1.0, atol=1e-9)


def test_penalty_terminal_cost():
    right = BoundarySection.ball("right", [1.0])
    phi = penalty_terminal_cost(right, 10.0)
    np.testing.assert_allclose(phi(np.array([[1.0], [-1.0]])), [0.0, 40.0])
    with pytest.raises(ValueError):
        penalty_terminal_cost(right, 0.0)
    cap = BoundarySection.cap("east", [1.0, 0.0], 0.9)
    disk = DomainSpec.ball([0, 0], 1.0)
    phi = penalty_terminal_cost(cap, 3.0, disk)
    vals = phi(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert vals[0] == 0.0 and vals[1] > 3.0 * 1.9 ** 2 * 0.9
