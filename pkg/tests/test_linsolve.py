import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastmob import operators as ops
from elastmob.geometry import Disc, Panel, Periodic, discretize
from elastmob.linsolve import SolverConfig, SolverFailure, dense_solve, gmres, l2_scaling
from elastmob.problems import two_disc_curves


def test_config_validation():
    for bad in (dict(tol=0.0), dict(tol=1.0), dict(max_iter=0), dict(restart=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


# --- scaling ------------------------------------------------------------------------

@pytest.mark.parametrize("n", [16, 64, 250])
def test_scaling_uniform_on_circle(n):
    d = discretize(Disc(), Periodic(n))
    w = l2_scaling(d)
    assert np.allclose(w, np.sqrt(2 * np.pi / n), rtol=1e-13)
    assert np.linalg.norm(w * np.ones(n)) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-13)


def test_scaling_replicated_and_round_trip():
    d = discretize(Disc(), Panel(4, 8))
    w2 = l2_scaling(d, 2)
    assert np.array_equal(w2[::2], w2[1::2])
    x = np.random.default_rng(0).normal(size=w2.size)
    # multiplying then dividing by a square-root weight is exact in this range
    y = (w2 * x) / w2
    assert np.max(np.abs(y - x)) <= 2 * np.finfo(float).eps * np.abs(x).max()


# --- gmres --------------------------------------------------------------------------

def test_gmres_identity():
    b = np.arange(1.0, 6.0)
    x, st_ = gmres(np.eye(5), b)
    assert np.allclose(x, b) and st_.iterations == 1


def test_gmres_zero_rhs():
    x, st_ = gmres(np.eye(5) * 3, np.zeros(5))
    assert np.all(x == 0.0) and st_.iterations == 0


def test_gmres_two_disc_elastance_iterations():
    disc = discretize(two_disc_curves(0.5), Panel(16, 16))
    sys = ops.elastance_system(disc, [1.0, -1.0])
    x, st_ = gmres(sys, sys.rhs, SolverConfig(tol=1e-6))
    assert 2 <= st_.iterations <= 6
    assert st_.residual <= 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_gmres_matches_dense_random(seed):
    rng = np.random.default_rng(seed)
    A = np.eye(100) + 0.3 * rng.normal(size=(100, 100)) / np.sqrt(100)
    b = rng.normal(size=100)
    x1, s = gmres(A, b, SolverConfig(tol=1e-12))
    x2, _ = dense_solve(A, b)
    assert np.linalg.norm(x1 - x2) <= 1e-8 * np.linalg.norm(x2)
    h = np.asarray(s.history)
    assert np.all(np.diff(h) <= 1e-12)


def test_gmres_failure_carries_iterate():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(60, 60))
    b = rng.normal(size=60)
    with pytest.raises(SolverFailure) as exc:
        gmres(A, b, SolverConfig(tol=1e-12, max_iter=3))
    assert exc.value.solution.shape == (60,)
    assert exc.value.stats.residual > 1e-12
    assert len(exc.value.stats.history) >= 2


def test_gmres_scaling_on_off_agree():
    disc = discretize(two_disc_curves(0.5), Panel(16, 16))
    sys = ops.mobility_system(disc, [[1.0, 0.5], [-1.0, -0.5]], [0.2, -0.1])
    tol = 1e-8
    x1, _ = gmres(sys, sys.rhs, SolverConfig(tol=tol, scaling=True))
    x2, _ = gmres(sys, sys.rhs, SolverConfig(tol=tol, scaling=False))
    w = sys.weights
    assert np.linalg.norm(w * (x1 - x2)) <= 10 * tol * np.linalg.norm(w * x2)


def test_gmres_weight_shape_checked():
    with pytest.raises(ValueError):
        gmres(np.eye(4), np.ones(4), weights=np.ones(3))


# --- dense --------------------------------------------------------------------------

def test_dense_identity_and_residual():
    b = np.array([1.0, -2.0, 3.0])
    x, s = dense_solve(np.eye(3), b)
    assert np.array_equal(x, b) and s.residual == 0.0


def test_dense_singular():
    with pytest.raises(np.linalg.LinAlgError):
        dense_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_dense_single_circle_zero_charge():
    d = discretize(Disc(), Panel(8, 16))
    sys = ops.elastance_system(d, [0.0])
    x, _ = dense_solve(sys, sys.rhs)
    assert abs(d.body_integral(x)[0]) <= 1e-12
    assert np.abs(x).max() <= 1e-12
