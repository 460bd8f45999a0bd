"""Problem drivers, round trips, analytic references and scenario geometries."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from . import operators as ops
from . import quadrature as quad
from .geometry import (TWO_PI, Curve, Disc, Discretization, Ellipse, FourierStar, Periodic,
                       RoundedBar, discretize, perp, proximity_refine)
from .kernels import INV_4PI, ROTLET_STRENGTH
from .linsolve import SolverConfig, SolveStats, dense_solve, gmres

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    """Result of one boundary-value solve.

    ``outputs`` holds the per-body quantities: ``phi`` (elastance), ``q`` and
    ``log_strength`` (capacitance), ``v`` and ``omega`` (mobility), ``F`` and
    ``T`` (resistance).  ``surface`` is the potential/velocity at the nodes
    (elastance and mobility only).
    """

    kind: str
    disc: Discretization
    density: np.ndarray
    u_inf: float | np.ndarray
    outputs: dict
    stats: SolveStats
    source: np.ndarray | None = None
    surface: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    errors: np.ndarray | None = None


def _solve(system, config, solver):
    if solver == "dense":
        return dense_solve(system, system.rhs)
    if solver != "gmres":
        raise ValueError(f"unknown solver {solver!r}")
    return gmres(system, system.rhs, config)


# ---------------------------------------------------------------------------
# diagnostics


def boundary_error(disc: Discretization, u, u_ref):
    """Per-body relative L2 error sqrt(int |u - u_ref|^2 / int |u_ref|^2)."""
    u = np.asarray(u, dtype=float).reshape(disc.n_nodes, -1)
    r = np.asarray(u_ref, dtype=float).reshape(disc.n_nodes, -1)
    num = disc.body_integral(((u - r) ** 2).sum(1))
    den = disc.body_integral((r**2).sum(1))
    if np.any(den == 0.0):
        raise ValueError("reference field has zero norm on a body")
    return np.sqrt(num / den)


def extract_rigid_motion(disc: Discretization, i: int, u):
    """Least-squares rigid motion (v, omega) of velocities ``u`` sampled on body ``i``.

    ``deviation`` is the relative L2 norm of the non-rigid remainder.
    """
    sl = disc.body_slice(i)
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    if len(u) == disc.n_nodes:
        u = u[sl]
    w = disc.weights[sl]
    xp = perp(disc.points[sl] - disc.centroids[i])
    v = (w[:, None] * u).sum(0) / disc.lengths[i]
    omega = float((w * (xp * u).sum(1)).sum() / disc.second_moments[i])
    rest = u - v - omega * xp
    norm = np.sqrt((w * (u**2).sum(1)).sum())
    dev = float(np.sqrt((w * (rest**2).sum(1)).sum()) / norm) if norm > 0 else 0.0
    return v, omega, dev


def two_disc_exact(d, phi1, phi2, x):
    """Exact exterior potential for unit discs at (-(1 + d/2), 0) and (1 + d/2, 0)."""
    x = np.asarray(x, dtype=float)
    alpha = np.sqrt(d + 0.25 * d * d)
    x0 = np.array([0.5 * d, 0.0])
    a = np.array([alpha, 0.0])
    v1 = np.pi * (phi2 - phi1) / np.log(np.linalg.norm(x0 + a) / np.linalg.norm(x0 - a))
    v2 = 0.5 * (phi1 + phi2)
    ratio = np.linalg.norm(x - a, axis=-1) / np.linalg.norm(x + a, axis=-1)
    return -v1 / TWO_PI * np.log(ratio) + v2


def two_disc_log_strength(d, phi1, phi2):
    """Strength v1 / (2 pi) of the image log sources; equals -q1 / (2 pi)."""
    alpha = np.sqrt(d + 0.25 * d * d)
    x0 = 0.5 * d
    return 0.5 * (phi2 - phi1) / np.log(abs(x0 + alpha) / abs(x0 - alpha))


# ---------------------------------------------------------------------------
# drivers


def solve_elastance(disc, q, u_inf=0.0, config=SolverConfig(), solver="gmres"):
    """Potentials of conductors carrying charges ``q`` (sum zero)."""
    system = ops.elastance_system(disc, q)
    mu, stats = _solve(system, config, solver)
    total = mu + system.source
    u = quad.eval_laplace_single(disc, total, quad.EvalPlan.on_surface(disc)) + u_inf
    phi = disc.body_integral(u) / disc.lengths
    spread = np.array([np.abs(u[disc.body_slice(i)] - phi[i]).max()
                       for i in range(disc.n_bodies)])
    moments = np.abs(disc.body_integral(mu))
    scale = np.maximum(disc.body_integral(np.abs(mu)), np.finfo(float).tiny)
    return SolveReport("elastance", disc, mu, float(u_inf), {"phi": phi, "q": np.asarray(q, float)},
                       stats, source=system.source, surface=u,
                       diagnostics={"constancy": spread, "moments": moments,
                                    "relative_moments": moments / scale})


def solve_capacitance(disc, phi, config=SolverConfig(), solver="gmres"):
    """Charges and potential at infinity of conductors held at potentials ``phi``."""
    system = ops.capacitance_system(disc, phi)
    x, stats = _solve(system, config, solver)
    q, u_inf = ops.capacitance_outputs(disc, x)
    return SolveReport("capacitance", disc, x[:disc.n_nodes], u_inf,
                       {"q": q, "log_strength": -q / TWO_PI, "phi": np.asarray(phi, float)},
                       stats)


def solve_mobility(disc, F, T, u_inf=(0.0, 0.0), config=SolverConfig(), solver="gmres"):
    """Rigid motions of bodies subject to forces ``F`` (sum zero) and torques ``T``."""
    system = ops.mobility_system(disc, F, T)
    mu, stats = _solve(system, config, solver)
    mu2 = mu.reshape(-1, 2)
    total = mu2 + system.source
    u_inf = np.asarray(u_inf, dtype=float)
    u = quad.eval_stokes_single(disc, total, quad.EvalPlan.on_surface(disc)) + u_inf
    v = np.zeros((disc.n_bodies, 2))
    om = np.zeros(disc.n_bodies)
    dev = np.zeros(disc.n_bodies)
    for i in range(disc.n_bodies):
        v[i], om[i], dev[i] = extract_rigid_motion(disc, i, u)
    xp = disc.relative_perp()
    moments = np.hstack([np.abs(disc.body_integral(mu2)),
                         np.abs(disc.body_integral((xp * mu2).sum(1)))[:, None]])
    amu = np.hypot(mu2[:, 0], mu2[:, 1])
    scale = np.maximum(np.stack([disc.body_integral(amu)] * 2
                                + [disc.body_integral(amu * np.hypot(xp[:, 0], xp[:, 1]))], 1),
                       np.finfo(float).tiny)
    return SolveReport("mobility", disc, mu2, u_inf,
                       {"v": v, "omega": om, "F": np.asarray(F, float), "T": np.asarray(T, float)},
                       stats, source=system.source, surface=u,
                       diagnostics={"rigidity": dev, "moments": moments,
                                    "relative_moments": moments / scale})


def solve_resistance(disc, v, omega, config=SolverConfig(), solver="gmres"):
    """Forces and torques on bodies moving rigidly with velocities ``v`` and ``omega``."""
    system = ops.resistance_system(disc, v, omega)
    x, stats = _solve(system, config, solver)
    F, T, u_inf = ops.resistance_outputs(disc, x)
    return SolveReport("resistance", disc, x[:2 * disc.n_nodes].reshape(-1, 2), u_inf,
                       {"F": F, "T": T, "v": np.asarray(v, float),
                        "omega": np.asarray(omega, float)}, stats)


@dataclass
class RoundTrip:
    first: SolveReport
    second: SolveReport
    errors: np.ndarray


def roundtrip_elastance(disc, phi, config=SolverConfig(), solver="gmres"):
    """Capacitance solve for ``phi``, then elastance solve with the resulting charges."""
    cap = solve_capacitance(disc, phi, config, solver)
    el = solve_elastance(disc, cap.outputs["q"] - cap.outputs["q"].mean(), cap.u_inf,
                         config, solver)
    phi = np.asarray(phi, dtype=float)
    el.errors = boundary_error(disc, el.surface, phi[disc.body])
    return RoundTrip(cap, el, el.errors)


def roundtrip_mobility(disc, v, omega, config=SolverConfig(), solver="gmres"):
    """Resistance solve for the rigid motions, then mobility solve with its forces/torques."""
    res = solve_resistance(disc, v, omega, config, solver)
    F = res.outputs["F"] - res.outputs["F"].mean(0)
    mob = solve_mobility(disc, F, res.outputs["T"], res.u_inf, config, solver)
    v = np.asarray(v, dtype=float)
    om = np.asarray(omega, dtype=float)
    exact = v[disc.body] + om[disc.body, None] * disc.relative_perp()
    mob.errors = boundary_error(disc, mob.surface, exact)
    return RoundTrip(res, mob, mob.errors)


# ---------------------------------------------------------------------------
# fields away from the boundary


def field_at(report: SolveReport, points, plan_kw=None):
    """Potential (N,) or velocity (N, 2) of a solved report at exterior points."""
    disc = report.disc
    plan = quad.EvalPlan(np.asarray(points, dtype=float), **(plan_kw or {}))
    x = plan.targets
    if report.kind == "elastance":
        return quad.eval_laplace_single(disc, report.density + report.source, plan) + report.u_inf
    if report.kind == "mobility":
        return quad.eval_stokes_single(disc, report.density + report.source, plan) + report.u_inf
    c = disc.centroids
    r = x[:, None, :] - c[None, :, :]
    r2 = (r**2).sum(-1)
    if report.kind == "capacitance":
        u = quad.eval_layer(disc, report.density, plan, "laplace_double")
        return u - 0.25 / np.pi * np.log(r2) @ report.outputs["q"] + report.u_inf
    if report.kind == "resistance":
        u = quad.eval_layer(disc, report.density, plan, "stokes_double")
        F, T = report.outputs["F"], report.outputs["T"]
        rf = (r * F[None]).sum(-1) / r2
        u += INV_4PI * (-0.5 * np.log(r2)[..., None] * F[None] + r * rf[..., None]).sum(1)
        u += ROTLET_STRENGTH * (perp(r) * (T / r2)[..., None]).sum(1)
        return u + report.u_inf
    raise ValueError(f"unknown report kind {report.kind!r}")


def _indicator(sub, pts):
    # double layer of a unit density: -1 inside, 0 outside; points on the curve get -1
    try:
        return quad.eval_layer(sub, np.ones(sub.n_nodes), quad.EvalPlan(pts), "laplace_double")
    except quad.AmbiguousTargetError:
        if len(pts) == 1:
            return np.array([-1.0])
        h = len(pts) // 2
        return np.concatenate([_indicator(sub, pts[:h]), _indicator(sub, pts[h:])])


def inside_mask(disc: Discretization, points):
    """Body index containing each point (-1 outside), via the double-layer indicator.

    Points lying on a boundary curve count as inside that body.
    """
    pts = np.asarray(points, dtype=float)
    out = np.full(len(pts), -1, dtype=int)
    for i in range(disc.n_bodies):
        sub = Discretization([disc.bodies[i]])
        out[_indicator(sub, pts) < -0.5] = i
    return out


def interior_points(disc: Discretization, n_per_body=5, seed=0):
    """Random points strictly inside each body (bodies star-shaped about their centroid)."""
    rng = np.random.default_rng(seed)
    pts, owner = [], []
    for i, b in enumerate(disc.bodies):
        s = rng.uniform(0, TWO_PI, n_per_body)
        t = rng.uniform(0.1, 0.6, n_per_body)
        c = disc.centroids[i]
        pts.append(c + t[:, None] * (b.curve.position(s) - c))
        owner.append(np.full(n_per_body, i))
    return np.concatenate(pts), np.concatenate(owner)


def interior_check(report: SolveReport, n_per_body=5, seed=0):
    """Max relative deviation of the interior field from the body's constant/rigid value."""
    disc = report.disc
    pts, owner = interior_points(disc, n_per_body, seed)
    u = field_at(report, pts)
    if report.kind == "elastance":
        phi = report.outputs["phi"]
        return float(np.abs(u - phi[owner]).max() / max(np.abs(phi).max(), 1e-300))
    if report.kind == "mobility":
        v, om = report.outputs["v"], report.outputs["omega"]
        rigid = v[owner] + om[owner, None] * perp(pts - disc.centroids[owner])
        return float(np.linalg.norm(u - rigid, axis=1).max()
                     / max(np.linalg.norm(report.surface, axis=1).max(), 1e-300))
    raise ValueError("interior check applies to elastance and mobility reports")


def evaluate_field_grid(report: SolveReport, bbox, nx, ny, mask_inside=True):
    """Field on a regular grid.

    Returns ``(X, Y, U, inside)`` where ``inside`` holds the containing body
    index (-1 outside).  Interior points hold the body's potential / rigid
    velocity (elastance, mobility) or NaN when ``mask_inside`` is set.
    """
    x0, y0, x1, y1 = bbox
    X, Y = np.meshgrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny))
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = inside_mask(report.disc, pts)
    ext = inside < 0
    vec = report.kind in ("mobility", "resistance")
    U = np.full((len(pts), 2) if vec else len(pts), np.nan)
    if ext.any():
        U[ext] = field_at(report, pts[ext])
    if not mask_inside and (~ext).any():
        idx = np.nonzero(~ext)[0]
        b = inside[idx]
        if report.kind == "elastance":
            U[idx] = report.outputs["phi"][b]
        elif report.kind == "capacitance":
            U[idx] = report.outputs["phi"][b]
        else:
            v, om = report.outputs["v"], report.outputs["omega"]
            U[idx] = v[b] + om[b, None] * perp(pts[idx] - report.disc.centroids[b])
    shape = (ny, nx, 2) if vec else (ny, nx)
    return X, Y, U.reshape(shape), inside.reshape(ny, nx)


# ---------------------------------------------------------------------------
# scenario geometries


@lru_cache(maxsize=None)
def load_data(name):
    """Embedded scenario table (``splash``, ``two_disc`` or ``nanocomposite``)."""
    text = resources.files("elastmob.data").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def two_disc_curves(d):
    if d <= 0:
        raise ValueError("gap must be positive")
    return [Disc((-(1.0 + 0.5 * d), 0.0), 1.0), Disc((1.0 + 0.5 * d, 0.0), 1.0)]


def two_disc_discretization(d, n_panels=16, order=16, ratio=1.0):
    """Panels refined toward the gap until each is no longer than ``ratio`` x its gap distance."""
    return proximity_refine(two_disc_curves(d), n_panels=n_panels, order=order, ratio=ratio)


def splash_curves():
    data = load_data("splash")
    return [FourierStar(tuple(c), np.pi * b, tuple(a))
            for c, b, a in zip(data["centers"], data["beta_over_pi"], data["coefficients"])]


def splash_discretization(n_panels=64, order=16, ratio=1.0):
    return proximity_refine(splash_curves(), n_panels=n_panels, order=order, ratio=ratio)


class OverlapError(ValueError):
    """Two inclusions (or an inclusion and a plate) intersect."""


def nanocomposite_curves(m, aspect=1.0):
    """Plates plus an ``m`` x 10 ellipse lattice; ``aspect`` = horizontal / vertical semi-axis."""
    data = load_data("nanocomposite")
    shift = data["plate_shift"]
    curves: list[Curve] = [RoundedBar(shift), RoundedBar(-shift)]
    if m == 0:
        return curves
    if m < 0 or aspect <= 0:
        raise ValueError("m must be non-negative and the aspect ratio positive")
    ncol = data["lattice_columns"]
    area = data["total_inclusion_area"] / m
    ax = np.sqrt(area * aspect / np.pi)
    ay = np.sqrt(area / (np.pi * aspect))
    # rows are centred in the gap: y_j = -0.9 + 1.8 (j + 1/2) / m
    centers = [(-0.9 + 1.8 * k / ncol, -0.9 + 1.8 * (j + 0.5) / m)
               for j in range(m) for k in range(ncol)]
    c = np.asarray(centers)
    # equal axis-aligned ellipses overlap iff the scaled centre distance is below 2
    scaled = (c[:, None, :] - c[None, :, :]) / np.array([ax, ay])
    dist = np.linalg.norm(scaled, axis=-1) + 4.0 * np.eye(len(c))
    if dist.min() <= 2.0:
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        raise OverlapError(f"inclusions {i} at {tuple(c[i])} and {j} at {tuple(c[j])} overlap")
    plate_inner = shift - 0.1
    bad = np.nonzero(np.abs(c[:, 1]) + ay >= plate_inner)[0]
    if len(bad):
        raise OverlapError(f"inclusion {bad[0]} at {tuple(c[bad[0]])} touches a plate")
    curves += [Ellipse(tuple(ci), (ax, ay)) for ci in centers]
    return curves


def nanocomposite_discretization(m, aspect=1.0, plate_points=None, ellipse_points=None):
    data = load_data("nanocomposite")
    npl = plate_points or data["plate_points"]
    nel = ellipse_points or data["ellipse_points"]
    curves = nanocomposite_curves(m, aspect)
    # plates sampled at cell midpoints of the native parameter
    schemes = [Periodic(npl, offset=np.pi / npl)] * 2 + [Periodic(nel)] * (len(curves) - 2)
    return discretize(curves, schemes)


def effective_capacitance(m, aspect=1.0, config=SolverConfig(), solver="gmres", disc=None,
                          **disc_kw):
    """Plate charge divided by plate potential difference with the plates at charges +-1."""
    disc = disc or nanocomposite_discretization(m, aspect, **disc_kw)
    q = np.zeros(disc.n_bodies)
    q[:2] = (1.0, -1.0)
    report = solve_elastance(disc, q, 0.0, config, solver)
    phi = report.outputs["phi"]
    report.outputs["C_eff"] = 1.0 / (phi[0] - phi[1])
    return report.outputs["C_eff"], report
