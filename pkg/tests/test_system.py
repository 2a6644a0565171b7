import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_ex1
from exitrate import (DiffusionSpec, DomainSpec, MultiChannelSystem, closed_loop_drift,
                      diffusion_matrix, verify_domain_attraction, verify_gain_tuple)
from exitrate.errors import EllipticityError, RangeError
from exitrate.system import probe_points
from oracles import is_hurwitz_oracle


def test_closed_loop_drift_examples(ex1):
    assert closed_loop_drift(ex1, 0, [1.0])[0] == pytest.approx(-1.5)
    assert closed_loop_drift(ex1, 1, [1.0])[0] == pytest.approx(-0.5)
    for j in ex1.modes:
        assert closed_loop_drift(ex1, j, [0.0])[0] == 0.0
    with pytest.raises(RangeError):
        closed_loop_drift(ex1, 3, [1.0])


def test_drift_matrix_drops_one_channel():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    Bs = [rng.standard_normal((3, 1)) for _ in range(3)]
    Ks = [rng.standard_normal((1, 3)) for _ in range(3)]
    sys = MultiChannelSystem.build(A, Bs, Ks, np.eye(3))
    full = A + sum(B @ K for B, K in zip(Bs, Ks))
    np.testing.assert_allclose(sys.drift_matrix(0), full)
    for j in range(1, 4):
        np.testing.assert_allclose(sys.drift_matrix(j), full - Bs[j - 1] @ Ks[j - 1])


def test_verify_gain_tuple_examples(ex1):
    rep = verify_gain_tuple(ex1)
    assert rep.passed
    np.testing.assert_allclose(rep.abscissas, (-1.5, -0.5, -0.5))
    bad = verify_gain_tuple(make_ex1(-0.4, -0.4))
    assert not bad.passed
    assert bad.abscissas[1] == pytest.approx(0.1)
    assert bad.mode_passed == (True, False, False)
    A = np.diag([-1.0, -2.0])
    zero = MultiChannelSystem.build(A, [np.ones((2, 1))], [np.zeros((1, 2))], np.eye(2))
    assert verify_gain_tuple(zero).passed


def test_margin_tightens_check(ex1):
    assert verify_gain_tuple(ex1, margin=0.4).passed
    assert not verify_gain_tuple(ex1, margin=0.6).passed


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4), n=st.integers(1, 3))
def test_gain_check_agrees_with_routh_oracle(seed, d, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d)) - rng.uniform(0, 2) * np.eye(d)
    Bs = [rng.standard_normal((d, 1)) for _ in range(n)]
    Ks = [0.5 * rng.standard_normal((1, d)) for _ in range(n)]
    sys = MultiChannelSystem.build(A, Bs, Ks, np.eye(d))
    rep = verify_gain_tuple(sys)
    for j in sys.modes:
        absc = rep.abscissas[j]
        if abs(absc) < 1e-6:
            continue
        assert rep.mode_passed[j] == is_hurwitz_oracle(sys.drift_matrix(j))


def test_domain_attraction_examples(ex1):
    dom = DomainSpec.interval(-1, 1)
    r0 = verify_domain_attraction(ex1, 0, dom)
    assert r0.passed and r0.worst_value == pytest.approx(-1.5)
    r1 = verify_domain_attraction(ex1, 1, dom)
    assert r1.passed and r1.worst_value == pytest.approx(-0.5)
    rall = verify_domain_attraction(ex1, None, dom)
    assert rall.worst_value == pytest.approx(-0.5)
    unstable = MultiChannelSystem.build([[1.0]], [[[1.0]]], [[[0.0]]], [[1.0]])
    r = verify_domain_attraction(unstable, 0, dom)
    assert not r.passed and r.worst_value == pytest.approx(1.0)


def test_diffusion_matrix_examples(ex1):
    np.testing.assert_allclose(diffusion_matrix(ex1, [0.3]), [[1.0]])
    s2 = MultiChannelSystem.build([[-1.0]], [[[1.0]]], [[[0.0]]], [[2.0]])
    np.testing.assert_allclose(diffusion_matrix(s2, [0.1]), [[4.0]])
    s3 = MultiChannelSystem.build(-np.eye(2), [np.ones((2, 1))], [np.zeros((1, 2))],
                                  [[1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(diffusion_matrix(s3, [0.2, -0.3]), [[1.0, 1.0], [1.0, 2.0]])


def test_ellipticity_floor():
    sing = MultiChannelSystem.build(-np.eye(2), [np.ones((2, 1))], [np.zeros((1, 2))],
                                    [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(EllipticityError):
        diffusion_matrix(sing, [0.0, 0.0])


def test_state_affine_lipschitz_bound():
    lin = np.zeros((1, 1, 1))
    lin[0, 0, 0] = 0.5
    spec = DiffusionSpec([[1.0]], linear=lin, lipschitz_bound=1.0)
    assert spec.kind == "state-affine"
    np.testing.assert_allclose(spec.a(np.array([0.4])), [[1.44]])
    with pytest.raises(ValueError):
        DiffusionSpec([[1.0]], linear=lin, lipschitz_bound=0.1)


@settings(deadline=None, max_examples=30)
@given(arrays(float, (2, 2), elements=st.floats(-1, 1)))
def test_diffusion_symmetric_and_above_floor(s):
    s = s + 2.0 * np.eye(2)
    sys = MultiChannelSystem.build(-np.eye(2), [np.ones((2, 1))], [np.zeros((1, 2))], s)
    pts = probe_points(DomainSpec.ball([0, 0], 1.0), n=1000)
    a = diffusion_matrix(sys, pts)
    np.testing.assert_allclose(a, np.swapaxes(a, -1, -2), atol=1e-12)
    assert np.linalg.eigvalsh(a)[:, 0].min() >= sys.diffusion.ellipticity_floor
