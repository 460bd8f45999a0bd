import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastmob import quadrature as Q
from elastmob.geometry import Disc, FourierStar, Panel, Periodic, discretize, perp
from elastmob.problems import splash_curves

CIRCLE_SCHEMES = [Panel(8, 16), Periodic(128)]


def circle(scheme=Panel(8, 16), center=(0.0, 0.0)):
    return discretize(Disc(center, 1.0), scheme)


def star_density(disc, seed=0, modes=5):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(modes, 2))
    k = np.arange(1, modes + 1)
    s = disc.params[:, None] * k
    return 0.3 + np.cos(s) @ a[:, 0] + np.sin(s) @ a[:, 1]


def lap_single(disc, mu, pts):
    return Q.eval_laplace_single(disc, mu, Q.EvalPlan(np.atleast_2d(pts)))


# --- Laplace single layer ---------------------------------------------------

@pytest.mark.parametrize("scheme", CIRCLE_SCHEMES)
def test_single_layer_circle_exterior_interior_near(scheme):
    d = circle(scheme)
    one = np.ones(d.n_nodes)
    u = lap_single(d, one, [[3.0, 0.0], [0.2, 0.1], [1.001, 0.0]])
    assert u[0] == pytest.approx(-np.log(3.0), abs=1e-13)
    assert abs(u[1]) <= 1e-13
    assert abs(u[2] + np.log(1.001)) <= 1e-9


@pytest.mark.parametrize("scheme", CIRCLE_SCHEMES)
def test_single_layer_circle_on_surface(scheme):
    d = circle(scheme)
    u = Q.eval_laplace_single(d, np.ones(d.n_nodes), Q.EvalPlan.on_surface(d))
    assert np.abs(u).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.floats(-7.0, -1.0), st.booleans())
def test_single_layer_near_targets_any_distance(theta, logd, outside):
    d = circle(Panel(8, 16))
    r = 1.0 + (10.0**logd if outside else -(10.0**logd))
    x = r * np.array([np.cos(theta), np.sin(theta)])
    u = lap_single(d, np.ones(d.n_nodes), x)[0]
    exact = -np.log(r) if outside else 0.0
    assert abs(u - exact) <= 1e-10


def test_single_layer_higher_mode_density():
    # S[cos(k t)] on the unit circle is cos(k t) r^{+-k} / (2k)
    d = circle(Panel(10, 16))
    k = 3
    mu = np.cos(k * d.params)
    th = np.linspace(0.1, 6.0, 7)
    for r in (0.5, 0.99999, 1.00001, 2.0):
        x = r * np.stack([np.cos(th), np.sin(th)], 1)
        exact = np.cos(k * th) * (r**k if r < 1 else r**-k) / (2 * k)
        assert np.allclose(lap_single(d, mu, x), exact, atol=1e-10)


def test_off_surface_target_on_curve_raises():
    d = circle()
    with pytest.raises(Q.AmbiguousTargetError):
        Q.eval_layer(d, np.ones(d.n_nodes), Q.EvalPlan([[0.0, 1.0]]), "laplace_double")


def test_density_shape_checked():
    d = circle()
    with pytest.raises(ValueError):
        Q.eval_laplace_single(d, np.ones(d.n_nodes + 1), Q.EvalPlan([[3.0, 0.0]]))
    with pytest.raises(ValueError):
        Q.eval_laplace_single(d, np.full(d.n_nodes, np.nan), Q.EvalPlan([[3.0, 0.0]]))


def test_plan_validation():
    with pytest.raises(ValueError):
        Q.EvalPlan([[0.0, 0.0]], near_factor=0.0)
    with pytest.raises(ValueError):
        Q.EvalPlan([[0.0, 0.0]], method="fmm")


def test_threshold_consistency():
    # a target just inside vs just outside the near threshold agrees closely
    d = circle(Panel(8, 16))
    mu = star_density(d)
    plen = 2 * np.pi / 8
    x_in = np.array([[1.0 + 1.5 * plen * 0.999, 0.01]])
    x_out = np.array([[1.0 + 1.5 * plen * 1.001, 0.01]])
    a = Q.eval_laplace_single(d, mu, Q.EvalPlan(x_in, near_factor=1.5))
    b = Q.eval_laplace_single(d, mu, Q.EvalPlan(x_in, near_factor=3.0))
    assert np.allclose(a, b, atol=1e-12)
    a = Q.eval_laplace_single(d, mu, Q.EvalPlan(x_out, near_factor=1.5))
    b = Q.eval_laplace_single(d, mu, Q.EvalPlan(x_out, near_factor=3.0))
    assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 100))
def test_layer_linearity(a, b, seed):
    d = circle(Panel(6, 12))
    m1, m2 = star_density(d, seed), star_density(d, seed + 1)
    pts = np.array([[1.01, 0.3], [0.0, 2.5], [-0.4, 0.2]])
    lhs = lap_single(d, a * m1 + b * m2, pts)
    rhs = a * lap_single(d, m1, pts) + b * lap_single(d, m2, pts)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


# --- on-surface Laplace operators ----------------------------------------------

@pytest.mark.parametrize("scheme", CIRCLE_SCHEMES)
def test_K_and_Kstar_on_circle(scheme):
    d = circle(scheme)
    one = np.ones(d.n_nodes)
    assert np.allclose(Q.eval_laplace_Kstar(d, one), -0.5, atol=1e-13)
    assert np.allclose(Q.eval_laplace_K(d, one), -0.5, atol=1e-13)
    mu = star_density(d)
    assert np.allclose(Q.eval_laplace_K(d, mu), Q.eval_laplace_Kstar(d, mu), atol=1e-13)


def test_K_matrix_matches_matrix_free():
    d = discretize([Disc((-1.3, 0.0)), FourierStar((1.4, 0.2), 0.3, (0.05, 0.03))],
                   [Panel(6, 12), Periodic(96)])
    mu = star_density(d)
    for adj in (False, True):
        A = Q.laplace_K_matrix(d, adj)
        assert np.allclose(A @ mu, Q.apply_laplace_K(d, mu, adj), atol=1e-13)
    assert np.allclose(Q.laplace_K_matrix(d, True), Q.laplace_K_matrix(d, False).T
                       * d.weights[None, :] / d.weights[:, None], atol=1e-13)


def test_cross_body_K_converged():
    left, right = Disc((-1.25, 0.0)), Disc((1.25, 0.0))
    coarse = discretize([left, right], [Panel(8, 16), Panel(8, 16)])
    fine = discretize([left, right], [Panel(32, 16), Panel(8, 16)])
    mu_c = (coarse.body == 0).astype(float)
    mu_f = (fine.body == 0).astype(float)
    a = Q.apply_laplace_K(coarse, mu_c)[coarse.body == 1]
    b = Q.apply_laplace_K(fine, mu_f)[fine.body == 1]
    assert np.allclose(a, b, atol=1e-10)


# --- Stokes -------------------------------------------------------------------

def stokes_single(disc, mu, pts):
    return Q.eval_stokes_single(disc, mu, Q.EvalPlan(np.atleast_2d(pts)))


@pytest.mark.parametrize("scheme", CIRCLE_SCHEMES)
def test_stokes_single_of_normal_density_constant_inside(scheme):
    d = circle(scheme)
    fine = circle(Panel(32, 16) if isinstance(scheme, Panel) else Periodic(512))
    pts = np.array([[0.0, 0.0], [0.3, -0.2], [-0.5, 0.6]])
    u = stokes_single(d, d.normals, pts)
    uf = stokes_single(fine, fine.normals, pts)
    assert np.allclose(u, uf, atol=1e-9)
    assert np.allclose(u, u[0], atol=1e-12)


def test_stokes_single_far_decay_for_zero_net_density():
    d = circle()
    mu = np.stack([np.cos(d.params), np.sin(2 * d.params)], 1)
    u = stokes_single(d, mu, [[1e3, 0.0], [0.0, -1e3]])
    norm = np.sqrt((d.weights * (mu**2).sum(1)).sum())
    assert np.abs(u).max() <= 1e-2 * norm


def test_stokes_single_continuous_across_boundary():
    c = FourierStar((0.0, 0.0), 0.2, (0.05, 0.02, 0.04))
    d = discretize(c, Panel(12, 16))
    mu = np.stack([star_density(d, 1), star_density(d, 2)], 1)
    i = 37
    x0, n0 = d.points[i], d.normals[i]
    u = stokes_single(d, mu, [x0 + 1e-9 * n0, x0 - 1e-9 * n0])
    on = Q.eval_stokes_single(d, mu, Q.EvalPlan.on_surface(d))[i]
    assert np.allclose(u[0], u[1], atol=1e-8)
    assert np.allclose(u[0], on, atol=1e-8)


def rigid_densities(disc):
    xp = disc.relative_perp()
    return [np.tile([1.0, 0.0], (disc.n_nodes, 1)), np.tile([0.0, 1.0], (disc.n_nodes, 1)), xp]


@pytest.mark.parametrize("scheme", CIRCLE_SCHEMES)
def test_traction_annihilates_rigid_on_circle(scheme):
    d = circle(scheme)
    for mu in rigid_densities(d):
        assert np.abs(0.5 * mu + Q.eval_stokes_traction(d, mu)).max() <= 1e-8
        assert np.abs(0.5 * mu + Q.eval_stokes_double(d, mu)).max() <= 1e-8


def test_traction_constant_density_circle_closed_form():
    # on the unit circle the PV traction of a constant density c is -(n n^T) c
    # for the normal part, so (1/2 + K) c is annihilated; check pointwise form
    d = circle(Panel(8, 16))
    c = np.array([0.7, -0.4])
    got = Q.eval_stokes_traction(d, np.tile(c, (d.n_nodes, 1)))
    assert np.allclose(got, -0.5 * c, atol=1e-12)


def test_traction_matrix_matches_matrix_free():
    d = discretize([Disc((-1.3, 0.0)), FourierStar((1.4, 0.2), 0.3, (0.05, 0.03))],
                   [Panel(6, 12), Periodic(96)])
    mu = np.stack([star_density(d, 3), star_density(d, 4)], 1)
    for adj in (False, True):
        A = Q.stokes_traction_matrix(d, adj)
        assert np.allclose(A @ mu.ravel(), Q.apply_stokes_traction(d, mu, adj).ravel(), atol=1e-13)


def test_cross_body_traction_converged():
    left, right = Disc((-1.25, 0.0)), Disc((1.25, 0.0))
    coarse = discretize([left, right], [Panel(8, 16), Panel(8, 16)])
    fine = discretize([left, right], [Panel(32, 16), Panel(8, 16)])

    def dens(d):
        return np.where((d.body == 0)[:, None], np.stack([np.cos(d.params), 1.0 + 0 * d.params], 1), 0)

    a = Q.eval_stokes_traction(coarse, dens(coarse))[coarse.body == 1]
    b = Q.eval_stokes_traction(fine, dens(fine))[fine.body == 1]
    assert np.allclose(a, b, atol=1e-10)


# --- QBX ----------------------------------------------------------------------

def test_qbx_circle_near_target():
    d = circle(Panel(8, 16))
    val = Q.qbx_expand_eval(d, np.ones(d.n_nodes), (1.05, 0.0), 0.05, 6, (1.001, 0.0))
    assert abs(val + np.log(1.001)) <= 1e-8


def test_qbx_center_value_is_constant_term():
    d = circle(Panel(8, 16))
    mu = star_density(d)
    c = np.array([1.3, 0.4])
    val = Q.qbx_expand_eval(d, mu, c, 0.1, 6, c)
    assert val == pytest.approx(lap_single(d, mu, c)[0], abs=1e-12)


def test_qbx_convergence_with_order():
    d = circle(Panel(16, 16))
    mu = star_density(d)
    c, R = np.array([1.2, 0.0]), 0.2
    t = c + np.array([0.0, R / 2])
    exact = lap_single(d, mu, t)[0]
    e6 = abs(Q.qbx_expand_eval(d, mu, c, R, 6, t) - exact)
    e10 = abs(Q.qbx_expand_eval(d, mu, c, R, 10, t) - exact)
    assert e10 < e6 / 8  # geometric decay at ratio 1/2 per order


def test_qbx_stokes_matches_adaptive():
    d = circle(Panel(16, 16))
    mu = np.stack([star_density(d, 5), star_density(d, 6)], 1)
    c, R = np.array([1.1, 0.0]), 0.1
    t = np.array([1.02, 0.0])
    ref = stokes_single(d, mu, t)[0]
    got = Q.qbx_expand_eval(d, mu, c, R, 16, t, kind="stokes")
    assert np.allclose(got, ref, atol=1e-9)


def test_qbx_invalid_center():
    d = circle()
    with pytest.raises(Q.ExpansionError):
        Q.qbx_expand_eval(d, np.ones(d.n_nodes), (1.02, 0.0), 0.05, 6, (1.03, 0.0), fallback=False)
    with pytest.raises(Q.ExpansionError):
        Q.qbx_expand_eval(d, np.ones(d.n_nodes), (1.5, 0.0), 0.05, 6, (1.6, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        v = Q.qbx_expand_eval(d, np.ones(d.n_nodes), (1.02, 0.0), 0.05, 6, (1.03, 0.0))
    assert v == pytest.approx(-np.log(1.03), abs=1e-10)


def test_qbx_method_in_plan():
    d = circle(Panel(16, 16))
    u = Q.eval_laplace_single(d, np.ones(d.n_nodes), Q.EvalPlan([[1.01, 0.0]], method="qbx",
                                                                  order=16))
    assert abs(u[0] + np.log(1.01)) <= 1e-9


# --- splash body ---------------------------------------------------------------

def test_identities_on_splash_body():
    d = discretize(splash_curves()[2], Panel(64, 16))
    assert np.allclose(Q.eval_laplace_Kstar(d, np.ones(d.n_nodes)), -0.5, atol=1e-10)
    for mu in rigid_densities(d):
        assert np.abs(0.5 * mu + Q.eval_stokes_double(d, mu)).max() <= 1e-8


def test_perp_of_relative_positions():
    d = circle(Panel(4, 8), center=(2.0, -1.0))
    assert np.allclose(d.relative_perp(), perp(d.points - (2.0, -1.0)), atol=1e-13)
