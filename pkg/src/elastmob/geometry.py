"""Analytic closed curves and their Nystrom discretizations.

Every curve is parametrized over ``s in [0, 2*pi)``, is positively oriented
(counter-clockwise) and smooth.  A :class:`Discretization` gathers the
quadrature nodes of one or more curves into flat arrays that the kernel and
operator code consumes directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special

TWO_PI = 2.0 * np.pi


def erf(x):
    """Error function, vectorized."""
    return special.erf(x)


def perp(v):
    """Rotate vectors by +90 degrees: (x, y) -> (-y, x)."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


# ---------------------------------------------------------------------------
# curves


class Curve:
    """Base class; subclasses implement :meth:`derivatives`."""

    def derivatives(self, s):
        """Return position, first and second parameter derivatives, each (..., 2)."""
        raise NotImplementedError

    def position(self, s):
        return self.derivatives(s)[0]

    def centroid_guess(self):
        """A point inside the curve (used for completion sources)."""
        s = np.linspace(0, TWO_PI, 256, endpoint=False)
        return self.position(s).mean(axis=0)

    def signed_area(self, n=512):
        s = np.linspace(0, TWO_PI, n, endpoint=False)
        p, dp, _ = self.derivatives(s)
        return 0.5 * np.mean(p[:, 0] * dp[:, 1] - p[:, 1] * dp[:, 0]) * TWO_PI


@dataclass(frozen=True)
class Disc(Curve):
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def derivatives(self, s):
        s = np.asarray(s, dtype=float)
        c, sn = np.cos(s), np.sin(s)
        R = self.radius
        p = np.stack([self.center[0] + R * c, self.center[1] + R * sn], axis=-1)
        dp = np.stack([-R * sn, R * c], axis=-1)
        ddp = np.stack([-R * c, -R * sn], axis=-1)
        return p, dp, ddp


@dataclass(frozen=True)
class FourierStar(Curve):
    """``center + r(t) (cos(t + beta), sin(t + beta))`` with ``r = 1 + sum a_k sin(k t)``."""

    center: tuple = (0.0, 0.0)
    beta: float = 0.0
    coeffs: tuple = ()

    def derivatives(self, s):
        s = np.asarray(s, dtype=float)
        k = np.arange(1, len(self.coeffs) + 1, dtype=float)
        a = np.asarray(self.coeffs, dtype=float)
        ks = s[..., None] * k
        r = 1.0 + np.sin(ks) @ a
        dr = np.cos(ks) @ (a * k)
        ddr = -(np.sin(ks) @ (a * k * k))
        e = np.stack([np.cos(s + self.beta), np.sin(s + self.beta)], axis=-1)
        ep = perp(e)
        p = np.asarray(self.center, dtype=float) + r[..., None] * e
        dp = dr[..., None] * e + r[..., None] * ep
        ddp = ddr[..., None] * e + 2.0 * dr[..., None] * ep - r[..., None] * e
        return p, dp, ddp

    def centroid_guess(self):
        return np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class Ellipse(Curve):
    center: tuple = (0.0, 0.0)
    semi_axes: tuple = (1.0, 1.0)
    rotation: float = 0.0

    def derivatives(self, s):
        s = np.asarray(s, dtype=float)
        a, b = self.semi_axes
        c, sn = np.cos(s), np.sin(s)
        loc = np.stack([a * c, b * sn], axis=-1)
        dloc = np.stack([-a * sn, b * c], axis=-1)
        ddloc = -loc
        cr, sr = np.cos(self.rotation), np.sin(self.rotation)
        rot = np.array([[cr, -sr], [sr, cr]])
        return (np.asarray(self.center, dtype=float) + loc @ rot.T,
                dloc @ rot.T, ddloc @ rot.T)

    def centroid_guess(self):
        return np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class RoundedBar(Curve):
    """Capacitor plate: an erf-smoothed bar of half-length about 1.1 and half-width 0.1.

    The native parameter ``u`` of the bar runs over [-pi/2, 3pi/2); the right
    half (``|u| <= pi/2``) is ``x = 1.1 (1 - (2/pi) A(u))``, ``y = 0.1 erf(7u)``
    where ``A(u) = u erf(10u) + exp(-100u^2) / (10 sqrt(pi))`` is a smooth
    ``|u|``.  The left half is the mirror image ``x(u) = -x(pi - u)``,
    ``y(u) = y(pi - u)``.  Here ``s = u + pi/2``.
    """

    shift: float = 0.0

    @staticmethod
    def _half(u):
        g = np.exp(-100.0 * u * u)
        e10 = erf(10.0 * u)
        x = 1.1 * (1.0 - (2.0 / np.pi) * (u * e10 + g / (10.0 * np.sqrt(np.pi))))
        dx = -1.1 * (2.0 / np.pi) * e10
        ddx = -1.1 * (2.0 / np.pi) * (20.0 / np.sqrt(np.pi)) * g
        g7 = np.exp(-49.0 * u * u)
        y = 0.1 * erf(7.0 * u)
        dy = 0.1 * (14.0 / np.sqrt(np.pi)) * g7
        ddy = -98.0 * u * dy
        return x, dx, ddx, y, dy, ddy

    def derivatives(self, s):
        s = np.mod(np.asarray(s, dtype=float), TWO_PI)
        u = s - 0.5 * np.pi
        right = u <= 0.5 * np.pi
        v = np.where(right, u, np.pi - u)
        x, dx, ddx, y, dy, ddy = self._half(v)
        sgn = np.where(right, 1.0, -1.0)
        X = sgn * x
        dX = dx  # d/du[-x(pi-u)] = x'(pi-u)
        ddX = sgn * ddx
        Y = y + self.shift
        dY = sgn * dy
        ddY = ddy
        p = np.stack([X, Y], axis=-1)
        return p, np.stack([dX, dY], axis=-1), np.stack([ddX, ddY], axis=-1)

    def centroid_guess(self):
        return np.array([0.0, self.shift])


def eval_curve(curve: Curve, s):
    """Position, unit tangent, unit outward normal and curvature at ``s``."""
    p, dp, ddp = curve.derivatives(s)
    speed = np.hypot(dp[..., 0], dp[..., 1])
    tangent = dp / speed[..., None]
    normal = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)
    kappa = (dp[..., 0] * ddp[..., 1] - dp[..., 1] * ddp[..., 0]) / speed**3
    return p, tangent, normal, kappa


# ---------------------------------------------------------------------------
# discretization schemes


@dataclass(frozen=True)
class Panel:
    """Composite Gauss-Legendre rule.

    ``edges`` (optional) overrides the uniform split into ``n_panels`` panels.
    ``refine_toward`` lists parameter locations toward which the panels are
    dyadically refined ``levels`` times.
    """

    n_panels: int = 16
    order: int = 16
    edges: tuple | None = None
    refine_toward: tuple = ()
    levels: int = 0

    def panel_edges(self):
        if self.edges is not None:
            e = np.asarray(self.edges, dtype=float)
            if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("panel edges must be strictly increasing")
            if not np.isclose(e[-1] - e[0], TWO_PI):
                raise ValueError("panel edges must span one period")
            return e
        if self.n_panels < 1:
            raise ValueError("n_panels must be positive")
        e = np.linspace(0.0, TWO_PI, self.n_panels + 1)
        for _ in range(self.levels):
            for s0 in self.refine_toward:
                s0 = float(np.mod(s0, TWO_PI))
                e = _split_near(e, s0)
        return e


def _split_near(edges, s0):
    """Bisect the panel(s) touching parameter ``s0`` (periodic)."""
    out = [edges[0]]
    n = len(edges) - 1
    for i in range(n):
        a, b = edges[i], edges[i + 1]
        # distance from s0 to the panel on the circle
        mids = [s0 - TWO_PI, s0, s0 + TWO_PI]
        near = any(a - 1e-12 <= m <= b + 1e-12 for m in mids)
        if near:
            out.append(0.5 * (a + b))
        out.append(b)
    return np.asarray(out)


@dataclass(frozen=True)
class Periodic:
    """Trapezoidal rule on ``n_points`` equispaced parameter values."""

    n_points: int = 256
    offset: float = 0.0


@lru_cache(maxsize=None)
def gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@dataclass
class Body:
    """Quadrature data for a single closed curve."""

    curve: Curve
    scheme: Panel | Periodic
    params: np.ndarray
    param_weights: np.ndarray
    edges: np.ndarray | None = None      # panel edges (panel scheme)
    panel_of: np.ndarray | None = None   # panel index per node (panel scheme)

    @property
    def order(self):
        return self.scheme.order if isinstance(self.scheme, Panel) else None

    @property
    def n_nodes(self):
        return len(self.params)


def _body(curve: Curve, scheme) -> Body:
    if isinstance(scheme, Panel):
        if scheme.order < 2:
            raise ValueError("panel order must be at least 2")
        edges = scheme.panel_edges()
        x, w = gauss_legendre(scheme.order)
        a, b = edges[:-1, None], edges[1:, None]
        params = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
        pw = (0.5 * (b - a) * w).ravel()
        panel_of = np.repeat(np.arange(len(edges) - 1), scheme.order)
        return Body(curve, scheme, params, pw, edges, panel_of)
    if isinstance(scheme, Periodic):
        if scheme.n_points < 16:
            raise ValueError("periodic scheme needs at least 16 points")
        n = scheme.n_points
        params = scheme.offset + TWO_PI * np.arange(n) / n
        return Body(curve, scheme, params, np.full(n, TWO_PI / n))
    raise TypeError(f"unknown scheme {scheme!r}")


class Discretization:
    """Flat node arrays for a collection of bodies.

    Attributes are numpy arrays over all nodes: ``points`` (N, 2), ``normals``,
    ``tangents``, ``weights`` (arclength), ``curvature``, ``speed``,
    ``params`` and ``body`` (body index).  Per-body data: ``lengths``,
    ``centroids`` and ``second_moments`` (W_i = int |x - c_i|^2 ds).
    """

    def __init__(self, bodies: Sequence[Body]):
        self.bodies = list(bodies)
        if not self.bodies:
            raise ValueError("need at least one body")
        counts = [b.n_nodes for b in self.bodies]
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        pts, tan, nrm, kap, w, spd = [], [], [], [], [], []
        for b in self.bodies:
            p, dp, ddp = b.curve.derivatives(b.params)
            speed = np.hypot(dp[:, 0], dp[:, 1])
            t = dp / speed[:, None]
            pts.append(p)
            tan.append(t)
            nrm.append(np.stack([t[:, 1], -t[:, 0]], axis=1))
            kap.append((dp[:, 0] * ddp[:, 1] - dp[:, 1] * ddp[:, 0]) / speed**3)
            w.append(speed * b.param_weights)
            spd.append(speed)
        self.points = np.concatenate(pts)
        self.tangents = np.concatenate(tan)
        self.normals = np.concatenate(nrm)
        self.curvature = np.concatenate(kap)
        self.weights = np.concatenate(w)
        self.speed = np.concatenate(spd)
        self.params = np.concatenate([b.params for b in self.bodies])
        self.body = np.repeat(np.arange(len(self.bodies)), counts)
        if np.any(self.weights <= 0):
            raise ValueError("non-positive quadrature weight; check orientation")
        nb = len(self.bodies)
        self.lengths = np.bincount(self.body, self.weights, minlength=nb)
        cx = np.bincount(self.body, self.weights * self.points[:, 0], minlength=nb)
        cy = np.bincount(self.body, self.weights * self.points[:, 1], minlength=nb)
        self.centroids = np.stack([cx, cy], axis=1) / self.lengths[:, None]
        rel = self.points - self.centroids[self.body]
        self.second_moments = np.bincount(self.body, self.weights * (rel**2).sum(1),
                                          minlength=nb)

    # convenience -----------------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.weights)

    @property
    def n_bodies(self):
        return len(self.bodies)

    def body_slice(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def relative_perp(self):
        """(x - x^c_i)^perp at every node."""
        return perp(self.points - self.centroids[self.body])

    def body_integral(self, values):
        """Per-body quadrature of nodal values (N,) or (N, k)."""
        values = np.asarray(values, dtype=float)
        nb = self.n_bodies
        if values.ndim == 1:
            return np.bincount(self.body, self.weights * values, minlength=nb)
        return np.stack([np.bincount(self.body, self.weights * values[:, j], minlength=nb)
                         for j in range(values.shape[1])], axis=1)

    def panel_lengths(self):
        """Local panel length at every node (node spacing x order for periodic)."""
        out = np.empty(self.n_nodes)
        for i, b in enumerate(self.bodies):
            sl = self.body_slice(i)
            w = self.weights[sl]
            if b.panel_of is not None:
                out[sl] = np.bincount(b.panel_of, w)[b.panel_of]
            else:
                out[sl] = w * 16
        return out

    def closed_normal_integral(self):
        """Per-body int n ds (should vanish)."""
        return self.body_integral(self.normals)

    def __repr__(self):
        return (f"Discretization(n_bodies={self.n_bodies}, n_nodes={self.n_nodes})")


def discretize(curves, scheme) -> Discretization:
    """Discretize one curve or a list of curves with a common (or per-curve) scheme."""
    if isinstance(curves, Curve):
        curves = [curves]
    if isinstance(scheme, (Panel, Periodic)):
        scheme = [scheme] * len(curves)
    if len(scheme) != len(curves):
        raise ValueError("one scheme per curve required")
    return Discretization([_body(c, s) for c, s in zip(curves, scheme)])


def proximity_refine(curves, n_panels=16, order=16, ratio=1.0, max_passes=40,
                     min_panels=None):
    """Panel discretization refined until each panel is no longer than
    ``ratio`` times its distance to every other body.

    Keeps plain Gauss-Legendre quadrature of cross-body interactions accurate
    for close-to-touching configurations.
    """
    curves = list(curves)
    edges = [np.linspace(0, TWO_PI, n_panels + 1) for _ in curves]
    samples = [c.position(np.linspace(0, TWO_PI, 2048, endpoint=False)) for c in curves]
    xg, _ = gauss_legendre(8)
    for _ in range(max_passes):
        changed = False
        for i, c in enumerate(curves):
            e = edges[i]
            a, b = e[:-1], e[1:]
            s = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xg
            p, dp, _ = c.derivatives(s)
            length = (np.hypot(dp[..., 0], dp[..., 1]) * 0.5 * (b - a)[:, None]
                      * gauss_legendre(8)[1]).sum(1)
            dist = np.full(len(a), np.inf)
            for j, smp in enumerate(samples):
                if j == i:
                    continue
                d = np.sqrt(((p.reshape(-1, 1, 2) - smp[None]) ** 2).sum(-1)).min(1)
                dist = np.minimum(dist, d.reshape(len(a), -1).min(1))
            split = length > ratio * dist
            if split.any():
                changed = True
                new = [e[0]]
                for k in range(len(a)):
                    if split[k]:
                        new.append(0.5 * (a[k] + b[k]))
                    new.append(b[k])
                edges[i] = _smooth_grading(np.asarray(new))
        if not changed:
            break
    return discretize(curves, [Panel(order=order, edges=tuple(e)) for e in edges])


def _smooth_grading(edges, factor=2.0):
    """Split panels more than ``factor`` times longer than a neighbour."""
    while True:
        h = np.diff(edges)
        hl = np.roll(h, 1)
        hr = np.roll(h, -1)
        bad = (h > factor * hl * (1 + 1e-9)) | (h > factor * hr * (1 + 1e-9))
        if not bad.any():
            return edges
        new = [edges[0]]
        for k in range(len(h)):
            if bad[k]:
                new.append(0.5 * (edges[k] + edges[k + 1]))
            new.append(edges[k + 1])
        edges = np.asarray(new)


def resolution_estimate(curve: Curve, n: int) -> float:
    """Fraction of coordinate energy in the top 20% of sampled Fourier modes."""
    if n < 32 or n & (n - 1):
        raise ValueError("n must be a power of two >= 32")
    s = TWO_PI * np.arange(n) / n
    p = curve.position(s)
    z = p[:, 0] + 1j * p[:, 1]
    c = np.fft.fft(z) / n
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    c[0] = 0.0  # translation carries no shape information
    energy = np.abs(c) ** 2
    tail = energy[k >= 0.4 * n].sum()
    return float(tail / energy.sum())
