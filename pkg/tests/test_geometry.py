import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastmob.geometry import (
    TWO_PI, Disc, Ellipse, FourierStar, Panel, Periodic, RoundedBar, discretize, erf,
    eval_curve, perp, proximity_refine, resolution_estimate,
)
from elastmob.problems import splash_curves


def maclaurin_erf(x, terms=120):
    # independent oracle: erf(x) = 2/sqrt(pi) sum (-1)^n x^(2n+1) / (n! (2n+1)),
    # summed in 60-digit decimal arithmetic to avoid cancellation
    getcontext().prec = 60
    X = Decimal(x)
    total, term = Decimal(0), X
    for n in range(terms):
        total += term / (2 * n + 1)
        term *= -X * X / (n + 1)
    two_over_sqrt_pi = Decimal("1.1283791670955125738961589031215451716881012586579977136881714")
    return float(two_over_sqrt_pi * total)


# --- curves ---------------------------------------------------------------

def test_star_at_zero_is_unit_radius_along_beta():
    c = FourierStar((0.3, -0.2), 0.7, (0.05, 0.02, 0.09))
    p = c.position(0.0)
    assert np.allclose(p, (0.3 + math.cos(0.7), -0.2 + math.sin(0.7)), atol=1e-15)


def test_disc_point_normal_curvature():
    x, t, n, kappa = eval_curve(Disc((1.0, 2.0), 1.0), np.pi / 2)
    assert np.allclose(x, (1.0, 3.0), atol=1e-15)
    assert np.allclose(n, (0.0, 1.0), atol=1e-15)
    assert kappa == pytest.approx(1.0, abs=1e-14)


def test_rounded_bar_midpoint():
    bar = RoundedBar(0.0)
    p = bar.position(np.pi / 2)  # native parameter 0
    assert p[1] == pytest.approx(0.0, abs=1e-15)
    assert p[0] == pytest.approx(1.1 * (1 - 2 / np.pi / (10 * np.sqrt(np.pi))), abs=1e-14)


def test_rounded_bar_closed_and_mirrored():
    bar = RoundedBar(1.1)
    s = np.linspace(0, TWO_PI, 64, endpoint=False)
    p = bar.position(s)
    q = bar.position(np.mod(np.pi - s + np.pi, TWO_PI))  # u -> pi - u in native terms
    assert np.allclose(p[:, 0], -q[:, 0], atol=1e-14)
    assert np.allclose(p[:, 1], q[:, 1], atol=1e-14)
    assert np.allclose(bar.position(0.0), bar.position(TWO_PI), atol=1e-14)
    assert bar.signed_area() > 0


@pytest.mark.parametrize("curve", [
    Disc((0.1, 0.2), 0.7),
    Ellipse((0.0, 1.0), (0.3, 0.1), 0.4),
    FourierStar((0.0, 0.0), 0.3, (0.05, 0.08, 0.02)),
    RoundedBar(-1.1),
])
def test_derivatives_match_finite_differences(curve):
    s = np.linspace(0.05, TWO_PI - 0.05, 37)
    h = 1e-6
    p, dp, ddp = curve.derivatives(s)
    pp, dpp, _ = curve.derivatives(s + h)
    pm, dpm, _ = curve.derivatives(s - h)
    assert np.allclose((pp - pm) / (2 * h), dp, atol=1e-6)
    assert np.allclose((dpp - dpm) / (2 * h), ddp, atol=1e-5)


def test_curves_positively_oriented():
    for c in [Disc(), Ellipse(semi_axes=(2.0, 0.5)), *splash_curves(), RoundedBar(1.1)]:
        assert c.signed_area() > 0


def test_perp_rotates_counterclockwise():
    assert np.allclose(perp([1.0, 0.0]), [0.0, 1.0])
    assert np.allclose(perp([[0.0, 2.0]]), [[-2.0, 0.0]])


# --- erf ------------------------------------------------------------------

def test_erf_values():
    assert erf(0.0) == 0.0
    assert erf(1.0) == pytest.approx(0.8427007929497149, abs=1e-15)


@given(st.floats(-3.0, 3.0))
def test_erf_against_maclaurin(x):
    assert abs(erf(x) - maclaurin_erf(x)) <= 1e-14


@given(st.floats(-30.0, 30.0))
def test_erf_odd(x):
    assert erf(x) == -erf(-x)


# --- discretizations ------------------------------------------------------

def test_panel_disc_counts_and_length():
    d = discretize(Disc(), Panel(8, 16))
    assert d.n_nodes == 128
    assert abs(d.weights.sum() - TWO_PI) <= 1e-12


def test_periodic_disc_centroid_and_moment():
    d = discretize(Disc((1.0, 2.0), 1.0), Periodic(200))
    assert np.allclose(d.centroids[0], (1.0, 2.0), atol=1e-13)
    assert d.second_moments[0] == pytest.approx(TWO_PI, abs=1e-12)


def test_splash_body_length_self_converged():
    # arclength speed of this body ranges over 0.5..4.4; 1024 points resolve it
    c = splash_curves()[0]
    a = discretize(c, Periodic(1024)).weights.sum()
    b = discretize(c, Periodic(2048)).weights.sum()
    assert abs(a - b) <= 1e-10


def test_normals_outward_and_unit():
    d = discretize(Ellipse((0.5, 0.0), (1.0, 0.4)), Panel(12, 10))
    assert np.allclose(np.hypot(*d.normals.T), 1.0)
    assert np.all(((d.points - (0.5, 0.0)) * d.normals).sum(1) > 0)
    assert np.allclose(d.closed_normal_integral(), 0.0, atol=1e-12)


def test_multi_body_bookkeeping():
    d = discretize([Disc((-2.0, 0.0)), Disc((2.0, 0.0), 0.5)], [Panel(4, 8), Periodic(64)])
    assert d.n_bodies == 2 and d.n_nodes == 32 + 64
    assert np.allclose(d.lengths, [TWO_PI, np.pi])
    assert np.all(d.body[d.body_slice(1)] == 1)


def test_scheme_validation():
    with pytest.raises(ValueError):
        discretize(Disc(), Panel(4, 1))
    with pytest.raises(ValueError):
        discretize(Disc(), Periodic(8))
    with pytest.raises(ValueError):
        Panel(edges=(0.0, 1.0, 0.5, TWO_PI)).panel_edges()
    with pytest.raises(ValueError):
        discretize([Disc(), Disc()], [Panel()])


def test_dyadic_refinement_toward_point():
    e = Panel(8, 16, refine_toward=(0.0,), levels=3).panel_edges()
    h = np.diff(e)
    assert h.min() == pytest.approx(TWO_PI / 8 / 8)
    assert e[0] == 0.0 and e[-1] == pytest.approx(TWO_PI)


def test_proximity_refine_grades_toward_gap():
    d = proximity_refine([Disc((-1.025, 0.0)), Disc((1.025, 0.0))], n_panels=16)
    b = d.bodies[0]
    h = np.diff(b.edges)
    # smallest panels at the gap (parameter 0 on the left disc)
    assert h[0] == pytest.approx(h.min()) and h[-1] == pytest.approx(h.min())
    assert h.max() / h.min() > 8


# --- resolution ------------------------------------------------------------

def test_resolution_estimate():
    assert resolution_estimate(Disc(), 128) <= 1e-14
    assert resolution_estimate(FourierStar(coeffs=tuple([0.05] * 12)), 64) <= 1e-12
    bar = RoundedBar(0.0)
    tails = [resolution_estimate(bar, n) for n in (64, 128, 256, 512, 1024)]
    assert all(b < a for a, b in zip(tails, tails[1:]))
    with pytest.raises(ValueError):
        resolution_estimate(Disc(), 100)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-5, 5), st.floats(-5, 5))
def test_disc_length_any_radius(r, cx, cy):
    d = discretize(Disc((cx, cy), r), Panel(6, 12))
    assert d.lengths[0] == pytest.approx(TWO_PI * r, rel=1e-13)
    assert np.allclose(d.curvature, 1.0 / r, rtol=1e-12)
