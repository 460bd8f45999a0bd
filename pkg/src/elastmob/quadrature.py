"""Layer-potential evaluation on and off a discretized boundary.

Three regimes are handled:

* far targets: the underlying Gauss-Legendre / trapezoidal rule;
* near targets (closer than ``near_factor`` panel lengths): a target-specific
  rule that interpolates the density on the panel and integrates the kernel
  with composite Gauss-Legendre intervals graded geometrically toward the
  closest boundary point; periodic bodies are instead upsampled spectrally;
  alternatively a QBX local expansion (``method="qbx"``);
* on-surface targets of single layers: the same graded rule (panels) or the
  Kress log-splitting rule (periodic bodies).

The smooth second-kind operators K, K* and their Stokes analogues are plain
Nystrom sums with analytic diagonal limits; see :func:`laplace_K_matrix` and
:func:`stokes_traction_matrix`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np
from scipy.signal import resample

from .geometry import Discretization, TWO_PI, gauss_legendre
from .kernels import INV_2PI, INV_4PI

log = logging.getLogger(__name__)

DENSE_LIMIT = 7000  # largest square operator (rows) we materialize
ON_CURVE_TOL = 1e-14  # relative distance below which a target counts as on the curve


class AmbiguousTargetError(ValueError):
    """Target sits on a source node but was not flagged as on-surface."""


class ExpansionError(ValueError):
    """QBX expansion requested with an invalid center/radius."""


# ---------------------------------------------------------------------------
# kernels in (r = x - y, r2, n_x, n_y) form; return (..., a, b) blocks


def _k_lap_single(r, r2, nx, ny):
    return (-0.25 / np.pi * np.log(r2))[..., None, None]


def _k_lap_double(r, r2, nx, ny):
    # dG/dn_y, the kernel of K*: integrates to -1 inside, 0 outside
    return (INV_2PI * (r * ny).sum(-1) / r2)[..., None, None]


def _k_lap_grad(r, r2, nx, ny):
    return (-INV_2PI * r / r2[..., None])[..., :, None]


def _k_stokes_single(r, r2, nx, ny):
    out = r[..., :, None] * r[..., None, :] / r2[..., None, None]
    d = -0.5 * np.log(r2)
    out[..., 0, 0] += d
    out[..., 1, 1] += d
    return INV_4PI * out


def _k_stokes_double(r, r2, nx, ny):
    # T_jik(y, x) n_y,k with y - x = -r: integrates to -delta_ij inside, 0 outside
    rn = (r * ny).sum(-1)
    return (1.0 / np.pi) * (rn / r2**2)[..., None, None] * (r[..., :, None] * r[..., None, :])


def _k_stokes_pressure(r, r2, nx, ny):
    return (INV_2PI * r / r2[..., None])[..., None, :]


def _k_stokes_traction(r, r2, nx, ny):
    rn = (r * nx).sum(-1)
    return (-1.0 / np.pi) * (rn / r2**2)[..., None, None] * (r[..., :, None] * r[..., None, :])


KERNELS = {
    # name: (function, out dim, density dim, log-singular on surface)
    "laplace_single": (_k_lap_single, 1, 1, True),
    "laplace_double": (_k_lap_double, 1, 1, False),
    "laplace_grad": (_k_lap_grad, 2, 1, False),
    "stokes_single": (_k_stokes_single, 2, 2, True),
    "stokes_double": (_k_stokes_double, 2, 2, False),
    "stokes_pressure": (_k_stokes_pressure, 1, 2, False),
    "stokes_traction": (_k_stokes_traction, 2, 2, False),
}


# ---------------------------------------------------------------------------
# evaluation plan


@dataclass
class EvalPlan:
    """Targets for a layer-potential evaluation.

    ``node_index[i] >= 0`` marks target ``i`` as sitting on that boundary node.
    ``normals`` are target normals (traction kernels only).
    """

    targets: np.ndarray
    node_index: np.ndarray | None = None
    normals: np.ndarray | None = None
    near_factor: float = 1.5
    order: int = 6
    method: str = "adaptive"

    def __post_init__(self):
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.node_index is None:
            self.node_index = np.full(len(self.targets), -1, dtype=int)
        self.node_index = np.asarray(self.node_index, dtype=int)
        if self.near_factor <= 0:
            raise ValueError("near threshold must be positive")
        if self.order < 2:
            raise ValueError("expansion order must be at least 2")
        if self.method not in ("adaptive", "qbx"):
            raise ValueError(f"unknown near-evaluation method {self.method!r}")

    @classmethod
    def on_surface(cls, disc: Discretization, **kw):
        return cls(disc.points.copy(), np.arange(disc.n_nodes), normals=disc.normals.copy(), **kw)


# ---------------------------------------------------------------------------
# helpers


@lru_cache(maxsize=None)
def _bary_weights(order):
    x, _ = gauss_legendre(order)
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, 1.0)
    return 1.0 / d.prod(axis=1)


def lagrange_matrix(order, t):
    """Interpolation matrix from Gauss-Legendre nodes (reference [-1, 1]) to ``t``."""
    x, _ = gauss_legendre(order)
    lam = _bary_weights(order)
    t = np.asarray(t, dtype=float)
    d = t[..., None] - x
    exact = d == 0.0
    d = np.where(exact, 1.0, d)
    q = lam / d
    out = q / q.sum(-1, keepdims=True)
    if exact.any():
        rows = exact.any(-1)
        out[rows] = exact[rows].astype(float)
    return out


def _graded_rule(t_star, delta, n_fine=16, max_levels=48, min_width=1e-11):
    """Composite GL rule on [-1, 1] graded toward ``t_star``.

    Returns node offsets ``t - t_star`` and weights.
    ``delta`` is the distance of the singularity from the real axis in the same
    reference units; levels stop once intervals are a few times ``delta``.
    The finest interval is kept above ``min_width`` so that fine nodes never
    round onto the singular point once mapped to the curve parameter.
    """
    xg, wg = gauss_legendre(n_fine)
    pts, wts = [], []
    for side in (-1.0, 1.0):
        L = (1.0 - t_star) if side > 0 else (t_star + 1.0)
        if L <= min_width:
            continue  # negligible sliver next to a panel end
        k_max = max(1, min(max_levels, int(np.log2(L / min_width))))
        K = k_max if delta <= 0 else int(np.clip(np.ceil(np.log2(L / delta)) + 2, 1, k_max))
        # offsets from t_star, kept separate to avoid cancellation near it
        br = np.append(side * L * 2.0 ** -np.arange(K + 1), 0.0)
        a, b = br[:-1], br[1:]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        pts.append((0.5 * (lo + hi))[:, None] + (0.5 * (hi - lo))[:, None] * xg)
        wts.append((0.5 * (hi - lo))[:, None] * wg)
    return np.concatenate([p.ravel() for p in pts]), np.concatenate([w.ravel() for w in wts])


def _closest_param(curve, a, b, target, s0):
    """Newton projection of ``target`` onto curve parameter interval [a, b]."""
    s = s0
    for _ in range(30):
        p, dp, ddp = curve.derivatives(s)
        d = p - target
        g = d @ dp
        h = dp @ dp + d @ ddp
        if h <= 0:
            h = dp @ dp
        step = g / h
        s_new = min(max(s - step, a), b)
        if abs(s_new - s) < 1e-15 * (1 + abs(s)):
            s = s_new
            break
        s = s_new
    return s


def _kernel_blocks(name, x, nx, y, ny):
    fn = KERNELS[name][0]
    r = x - y
    r2 = (r**2).sum(-1)
    return fn(r, r2, nx, ny)


def _as_density(density, disc, b):
    d = np.asarray(density, dtype=float)
    if b == 1:
        d = d.reshape(disc.n_nodes, 1)
    else:
        d = d.reshape(disc.n_nodes, b)
    if not np.all(np.isfinite(d)):
        raise ValueError("density has non-finite values")
    return d


# ---------------------------------------------------------------------------
# generic layer evaluation


def eval_layer(disc: Discretization, density, plan: EvalPlan, kernel: str):
    """Evaluate ``sum over sources of kernel(x, y) density(y) ds_y`` at plan targets.

    Returns ``(M, a)`` (or ``(M,)`` when ``a == 1``).
    """
    fn, a_dim, b_dim, log_singular = KERNELS[kernel]
    dens = _as_density(density, disc, b_dim)
    tx = plan.targets
    M = len(tx)
    tn = plan.normals if plan.normals is not None else np.zeros_like(tx)
    onsurf = plan.node_index >= 0
    if np.any(onsurf) and not log_singular:
        raise ValueError(f"on-surface evaluation of {kernel} is not supported")
    out = np.zeros((M, a_dim))
    for ib, body in enumerate(disc.bodies):
        sl = disc.body_slice(ib)
        if body.panel_of is not None:
            out += _eval_panel_body(disc, ib, dens[sl], plan, tn, kernel)
        else:
            out += _eval_periodic_body(disc, ib, dens[sl], plan, tn, kernel)
    return out[:, 0] if a_dim == 1 else out


@numba.njit(cache=True)
def _plain_compiled(kind, tx, sx, sn, sw, dens, out):
    """Direct sums skipping coincident pairs; kind 0..3 = laplace single/double,
    stokes single/double."""
    m = tx.shape[0]
    ns = sx.shape[0]
    for i in range(m):
        a0 = 0.0
        a1 = 0.0
        for j in range(ns):
            dx = tx[i, 0] - sx[j, 0]
            dy = tx[i, 1] - sx[j, 1]
            r2 = dx * dx + dy * dy
            if r2 == 0.0:
                continue
            if kind == 0:
                a0 += -np.log(r2) * sw[j] * dens[j, 0]
            elif kind == 1:
                a0 += (dx * sn[j, 0] + dy * sn[j, 1]) / r2 * sw[j] * dens[j, 0]
            elif kind == 2:
                f0 = dens[j, 0] * sw[j]
                f1 = dens[j, 1] * sw[j]
                lg = -0.5 * np.log(r2)
                rf = (dx * f0 + dy * f1) / r2
                a0 += lg * f0 + dx * rf
                a1 += lg * f1 + dy * rf
            else:
                rn = dx * sn[j, 0] + dy * sn[j, 1]
                rf = rn * (dx * dens[j, 0] + dy * dens[j, 1]) / (r2 * r2) * sw[j]
                a0 += dx * rf
                a1 += dy * rf
        if kind == 0:
            out[i, 0] = a0 / (4.0 * np.pi)
        elif kind == 1:
            out[i, 0] = a0 / (2.0 * np.pi)
        elif kind == 2:
            out[i, 0] = a0 / (4.0 * np.pi)
            out[i, 1] = a1 / (4.0 * np.pi)
        else:
            out[i, 0] = a0 / np.pi
            out[i, 1] = a1 / np.pi


_COMPILED_KIND = {"laplace_single": 0, "laplace_double": 1, "stokes_single": 2,
                  "stokes_double": 3}


def _plain(kernel, tx, tn, sx, sn, sw, dens, mask=None, chunk=512):
    """Plain quadrature sum; ``mask`` (M, S) True drops a pair."""
    fn, a_dim, b_dim, _ = KERNELS[kernel]
    out = np.zeros((len(tx), a_dim))
    if mask is None and kernel in _COMPILED_KIND:
        _plain_compiled(_COMPILED_KIND[kernel], np.ascontiguousarray(tx, dtype=float),
                        np.ascontiguousarray(sx), np.ascontiguousarray(sn),
                        np.ascontiguousarray(sw), np.ascontiguousarray(dens), out)
        return out
    for c0 in range(0, len(tx), chunk):
        c1 = min(c0 + chunk, len(tx))
        r = tx[c0:c1, None, :] - sx[None, :, :]
        r2 = (r**2).sum(-1)
        drop = r2 == 0.0
        if mask is not None:
            drop = drop | mask[c0:c1]
        r2s = np.where(drop, 1.0, r2)
        blk = fn(r, r2s, tn[c0:c1, None, :], sn[None, :, :])
        blk = np.where(drop[..., None, None], 0.0, blk)
        out[c0:c1] = np.einsum("msab,sb->ma", blk, sw[:, None] * dens)
    return out


def _check_coincident(disc, sl, plan):
    off = plan.node_index < 0
    if not off.any():
        return
    sx = disc.points[sl]
    tx = plan.targets[off]
    for c0 in range(0, len(tx), 1024):
        d2 = ((tx[c0:c0 + 1024, None, :] - sx[None]) ** 2).sum(-1)
        if np.any(d2 == 0.0):
            raise AmbiguousTargetError(
                "target coincides with a boundary node; flag it as on-surface")


def _eval_panel_body(disc, ib, dens, plan, tn, kernel):
    body = disc.bodies[ib]
    sl = disc.body_slice(ib)
    _check_coincident(disc, sl, plan)
    order = body.order
    sx, sn, sw = disc.points[sl], disc.normals[sl], disc.weights[sl]
    npan = len(body.edges) - 1
    plen = np.bincount(body.panel_of, sw, minlength=npan)
    tx = plan.targets
    M = len(tx)
    # near pairs: distance to panel nodes below threshold
    near = np.zeros((M, npan), dtype=bool)
    pts_by_panel = sx.reshape(npan, order, 2)
    for c0 in range(0, M, 256):
        d2 = ((tx[c0:c0 + 256, None, None, :] - pts_by_panel[None]) ** 2).sum(-1).min(-1)
        near[c0:c0 + 256] = d2 < (plan.near_factor * plen[None, :]) ** 2
    # own panel of on-surface targets
    node = plan.node_index
    own = (node >= sl.start) & (node < sl.stop)
    if own.any():
        near[np.nonzero(own)[0], body.panel_of[node[own] - sl.start]] = True
    out = _plain(kernel, tx, tn, sx, sn, sw, dens)
    ti, pi = np.nonzero(near)
    if len(ti) == 0:
        return out
    # remove the plain contributions of near pairs
    src = pi[:, None] * order + np.arange(order)
    r = tx[ti, None, :] - sx[src]
    r2 = (r**2).sum(-1)
    drop = r2 == 0.0
    blk = KERNELS[kernel][0](r, np.where(drop, 1.0, r2), tn[ti, None, :], sn[src])
    blk = np.where(drop[..., None, None], 0.0, blk)
    np.add.at(out, ti, -np.einsum("psab,psb->pa", blk, sw[src][..., None] * dens[src]))
    if plan.method == "qbx" and kernel in ("laplace_single", "stokes_single"):
        return out + _qbx_near(disc, ib, dens, plan, kernel, near)
    for t, p in zip(ti, pi):
        on_param = None
        if own[t] and body.panel_of[node[t] - sl.start] == p:
            on_param = body.params[node[t] - sl.start]
        out[t] += _near_panel_value(body, p, dens[p * order:(p + 1) * order], tx[t],
                                    tn[t], kernel, on_param)
    return out


def _near_panel_value(body, p, dens_p, x, nx, kernel, on_param=None):
    """Accurate integral over one panel for one (near or on-surface) target."""
    a, b = body.edges[p], body.edges[p + 1]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    curve = body.curve
    if on_param is not None:
        s_star = on_param
        delta = 0.0
    else:
        ref_nodes, _ = gauss_legendre(body.order)
        cand = np.concatenate([[a, b], mid + half * ref_nodes])
        pc = curve.position(cand)
        s0 = cand[np.argmin(((pc - x) ** 2).sum(-1))]
        s_star = _closest_param(curve, a, b, x, s0)
        p_star, dp_star, _ = curve.derivatives(s_star)
        dist = np.sqrt(((p_star - x) ** 2).sum())
        delta = dist / (np.sqrt(dp_star @ dp_star) * half)
        if dist <= ON_CURVE_TOL * (1.0 + np.hypot(*x)):
            if not KERNELS[kernel][3]:
                raise AmbiguousTargetError("target lies on the boundary curve")
            delta = 0.0
    t_star = (s_star - mid) / half
    off, wf = _graded_rule(t_star, delta, min_width=max(1e-11, 1e-11 * (1 + abs(s_star)) / half))
    tf = t_star + off
    sf = s_star + half * off
    pf, dpf, _ = curve.derivatives(sf)
    speed = np.hypot(dpf[:, 0], dpf[:, 1])
    nf = np.stack([dpf[:, 1], -dpf[:, 0]], axis=1) / speed[:, None]
    r = x[None, :] - pf
    r2 = (r**2).sum(-1)
    blk = KERNELS[kernel][0](r, r2, nx[None, :], nf)
    interp = lagrange_matrix(body.order, tf)
    dens_f = interp @ dens_p
    return np.einsum("sab,sb->a", blk, (wf * half * speed)[:, None] * dens_f)


def _eval_periodic_body(disc, ib, dens, plan, tn, kernel):
    body = disc.bodies[ib]
    sl = disc.body_slice(ib)
    _check_coincident(disc, sl, plan)
    sx, sn, sw = disc.points[sl], disc.normals[sl], disc.weights[sl]
    n = body.n_nodes
    h = sw.max()
    tx = plan.targets
    M = len(tx)
    node = plan.node_index
    own = (node >= sl.start) & (node < sl.stop)
    out = np.zeros((M, KERNELS[kernel][1]))
    # distance of each target to the body (node-based)
    dmin = np.empty(M)
    for c0 in range(0, M, 512):
        dmin[c0:c0 + 512] = np.sqrt(((tx[c0:c0 + 512, None, :] - sx[None]) ** 2).sum(-1)).min(1)
    factor = np.ones(M, dtype=int)
    close = (~own) & (dmin < 8.0 * h)
    if close.any():
        # true distance by projection; upsample until spacing is below delta / 5
        hp = TWO_PI / n
        for i in np.nonzero(close)[0]:
            j = int(np.argmin(((sx - tx[i]) ** 2).sum(-1)))
            s0 = body.params[j]
            s_star = _closest_param(body.curve, s0 - hp, s0 + hp, tx[i], s0)
            dmin[i] = np.sqrt(((body.curve.position(s_star) - tx[i]) ** 2).sum())
            if dmin[i] <= ON_CURVE_TOL * (1.0 + np.hypot(*tx[i])) and not KERNELS[kernel][3]:
                raise AmbiguousTargetError("target lies on the boundary curve")
        need = np.ceil(5.0 * h / np.maximum(dmin[close], 1e-300))
        factor[close] = 2 ** np.ceil(np.log2(np.clip(need, 1, None))).astype(int)
    # very close targets: graded rule over the whole period instead of upsampling
    graded = (~own) & (factor > 16)
    for i in np.nonzero(graded)[0]:
        out[i] = _periodic_graded_value(body, sx, dens, tx[i], tn[i], kernel)
    factor[graded] = 0
    if own.any():
        idx = np.nonzero(own)[0]
        out[idx] = _kress_single(body, disc, sl, dens, node[idx] - sl.start, kernel)
    for f in np.unique(factor[(~own) & (factor > 0)]):
        idx = np.nonzero((~own) & (factor == f))[0]
        if f == 1:
            out[idx] = _plain(kernel, tx[idx], tn[idx], sx, sn, sw, dens)
            continue
        m = n * f
        s_up = body.params[0] + TWO_PI * np.arange(m) / m
        p, dp, _ = body.curve.derivatives(s_up)
        speed = np.hypot(dp[:, 0], dp[:, 1])
        nrm = np.stack([dp[:, 1], -dp[:, 0]], axis=1) / speed[:, None]
        d_up = resample(dens, m, axis=0)
        out[idx] = _plain(kernel, tx[idx], tn[idx], p, nrm, speed * TWO_PI / m, d_up)
    return out


def trig_interp(values, s0, s):
    """Trigonometric interpolant of equispaced samples (first at ``s0``) at ``s``."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    c = np.fft.fft(values, axis=0) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        c[n // 2] *= 0.5  # split the Nyquist mode symmetrically
        c = np.concatenate([c, c[n // 2:n // 2 + 1]], axis=0)
        k = np.append(k, n // 2)
    e = np.exp(1j * np.outer(np.asarray(s) - s0, k))
    return np.real(e @ c)


def _periodic_graded_value(body, sx, dens, x, nx, kernel):
    """Whole-period composite GL rule graded toward the point closest to ``x``."""
    n = body.n_nodes
    hp = TWO_PI / n
    j = int(np.argmin(((sx - x) ** 2).sum(-1)))
    s0 = body.params[j]
    s_star = _closest_param(body.curve, s0 - hp, s0 + hp, x, s0)
    p_star, dp_star, _ = body.curve.derivatives(s_star)
    dist = np.sqrt(((p_star - x) ** 2).sum())
    n_int = max(n // 2, 8)
    dlt = TWO_PI / n_int
    xg, wg = gauss_legendre(16)
    # uniform intervals away from s_star, graded pair [s_star - dlt, s_star + dlt]
    a = s_star + dlt + dlt * np.arange(n_int - 2)
    s_far = (a[:, None] + 0.5 * dlt * (xg + 1)).ravel()
    w_far = np.tile(0.5 * dlt * wg, n_int - 2)
    delta = dist / (np.sqrt(dp_star @ dp_star) * dlt)
    off, w_near = _graded_rule(0.0, delta, min_width=max(1e-11, 1e-11 * (1 + abs(s_star)) / dlt))
    sf = np.concatenate([s_far, s_star + dlt * off])
    wf = np.concatenate([w_far, dlt * w_near])
    pf, dpf, _ = body.curve.derivatives(sf)
    speed = np.hypot(dpf[:, 0], dpf[:, 1])
    nf = np.stack([dpf[:, 1], -dpf[:, 0]], axis=1) / speed[:, None]
    r = x[None, :] - pf
    r2 = (r**2).sum(-1)
    blk = KERNELS[kernel][0](r, r2, nx[None, :], nf)
    dens_f = trig_interp(dens, body.params[0], sf)
    return np.einsum("sab,sb->a", blk, (wf * speed)[:, None] * dens_f)


def _kress_single(body, disc, sl, dens, rows, kernel):
    """On-surface single layer on a periodic body (log kernel split off)."""
    n = body.n_nodes
    if n % 2:
        raise ValueError("on-surface evaluation on a periodic body needs an even node count")
    t = body.params
    sx, sw = disc.points[sl], disc.weights[sl]
    speed = disc.speed[sl]
    tau = disc.tangents[sl]
    N = n // 2
    dt = t[rows, None] - t[None, :]
    # Kress weights depend only on the node index difference
    k = np.arange(n)
    m = np.arange(1, N)
    R_k = (-(TWO_PI / N) * (np.cos(np.outer(k, m) * (TWO_PI / n)) / m).sum(-1)
           - (np.pi / N**2) * (-1.0) ** k)
    R = R_k[(rows[:, None] - k[None, :]) % n]
    r = sx[rows, None, :] - sx[None, :, :]
    r2 = (r**2).sum(-1)
    same = r2 == 0.0
    s2 = 4.0 * np.sin(0.5 * dt) ** 2
    smooth = 0.5 * np.log(np.where(same, 1.0, r2) / np.where(same, 1.0, s2))
    smooth[same] = np.log(speed[rows])
    # int log|x - y| f ds = 0.5 sum R f speed + sum (2pi/n) smooth f speed
    logw = 0.5 * R * speed[None, :] + smooth * sw[None, :]
    if kernel == "laplace_single":
        return (-INV_2PI * logw @ dens)
    if kernel == "stokes_single":
        rr = r[..., :, None] * r[..., None, :] / np.where(same, 1.0, r2)[..., None, None]
        tt = tau[rows][:, :, None] * tau[rows][:, None, :]
        rr[same] = tt[np.nonzero(same)[0]]
        val = -(logw @ dens) + np.einsum("mnab,nb->ma", rr, sw[:, None] * dens)
        return INV_4PI * val
    raise ValueError(f"on-surface {kernel} not supported")


# ---------------------------------------------------------------------------
# QBX local expansions


def _upsampled_sources(disc, dens, sub=4):
    """Sources and density on panels split into ``sub`` pieces (panel bodies only)."""
    pts, wts, vals = [], [], []
    for ib, body in enumerate(disc.bodies):
        sl = disc.body_slice(ib)
        d = dens[sl]
        if body.panel_of is None:
            m = body.n_nodes * sub
            s = body.params[0] + TWO_PI * np.arange(m) / m
            p, dp, _ = body.curve.derivatives(s)
            pts.append(p)
            wts.append(np.hypot(dp[:, 0], dp[:, 1]) * TWO_PI / m)
            vals.append(resample(d, m, axis=0))
            continue
        order = body.order
        xg, wg = gauss_legendre(order)
        fine = ((np.arange(sub)[:, None] + 0.5 * (xg + 1)) / sub * 2 - 1).ravel()
        fw = np.tile(wg / sub, sub)
        interp = lagrange_matrix(order, fine)
        e = body.edges
        a, b = e[:-1, None], e[1:, None]
        s = (0.5 * (a + b) + 0.5 * (b - a) * fine).ravel()
        p, dp, _ = body.curve.derivatives(s)
        speed = np.hypot(dp[:, 0], dp[:, 1])
        pts.append(p)
        wts.append(speed * (0.5 * (b - a) * fw).ravel())
        npan = len(e) - 1
        vals.append(np.einsum("fo,pob->pfb", interp, d.reshape(npan, order, -1)).reshape(-1, d.shape[1]))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(vals)


def _laplace_local_coeffs(c, y, wmu, order):
    zc = c[0] + 1j * c[1]
    w = (y[:, 0] + 1j * y[:, 1]) - zc
    coef = np.empty(order + 1, dtype=complex)
    coef[0] = -INV_2PI * np.sum(wmu * np.log(-w))
    inv = 1.0 / w
    pw = np.ones_like(w)
    for k in range(1, order + 1):
        pw = pw * inv
        coef[k] = INV_2PI * np.sum(wmu * pw) / k
    return coef


def _stokes_local_coeffs(c, y, wf, order):
    """Taylor coefficients of the three Goursat functions about ``c``."""
    zc = c[0] + 1j * c[1]
    yy = y[:, 0] + 1j * y[:, 1]
    F = wf[:, 0] + 1j * wf[:, 1]
    w = yy - zc
    logc = np.log(-w)  # log(c - y)
    inv = 1.0 / w
    h1 = np.zeros(order + 1, dtype=complex)
    h2 = np.zeros(order + 1, dtype=complex)
    h3 = np.zeros(order + 1, dtype=complex)
    # log(z - y) = log(c - y) - sum_k (z-c)^k / (k w^k); 1/(z - y) = -sum_k (z-c)^k / w^(k+1)
    h1[0] = np.sum(-0.5 * F * logc + 0.5 * F)
    h3[0] = np.sum(-0.5 * np.conj(F) * logc)
    pw = np.ones_like(w)
    for k in range(0, order + 1):
        inv_pow = pw * inv  # w^-(k+1)
        h2[k] = np.sum(0.5 * F * (-inv_pow))
        h3[k] += np.sum(-0.5 * F * np.conj(yy) * (-inv_pow))
        if k >= 1:
            lk = -pw / k  # coefficient of (z-c)^k in log(z - y) beyond log(c-y); pw = w^-k
            h1[k] += np.sum(-0.5 * F * lk)
            h3[k] += np.sum(-0.5 * np.conj(F) * lk)
        pw = inv_pow
    return INV_4PI * h1, INV_4PI * h2, INV_4PI * h3


def _eval_laplace_expansion(coef, c, target):
    dz = (target[0] - c[0]) + 1j * (target[1] - c[1])
    return float(np.real(np.polyval(coef[::-1], dz)))


def _eval_stokes_expansion(coefs, c, target):
    h1, h2, h3 = coefs
    z = target[0] + 1j * target[1]
    dz = z - (c[0] + 1j * c[1])
    v1 = np.polyval(h1[::-1], dz)
    v2 = np.polyval(h2[::-1], dz)
    v3 = np.polyval(h3[::-1], dz)
    u = v1 + z * np.conj(v2) + np.conj(v3)
    return np.array([u.real, u.imag])


def _distance_to_boundary(disc, x):
    """Distance from ``x`` to the nearest point of any discretized curve."""
    best = np.inf
    for ib, body in enumerate(disc.bodies):
        sl = disc.body_slice(ib)
        d2 = ((disc.points[sl] - x) ** 2).sum(-1)
        j = int(np.argmin(d2))
        if body.panel_of is not None:
            p = body.panel_of[j]
            lo = body.edges[max(p - 1, 0)]
            hi = body.edges[min(p + 2, len(body.edges) - 1)]
            s = _closest_param(body.curve, lo, hi, x, body.params[j])
        else:
            h = TWO_PI / body.n_nodes
            s = _closest_param(body.curve, body.params[j] - h, body.params[j] + h, x,
                               body.params[j])
        best = min(best, float(np.sqrt(((body.curve.position(s) - x) ** 2).sum())))
    return best


def qbx_expand_eval(disc: Discretization, density, center, radius, order, target,
                    kind="laplace", fallback=True):
    """Value at ``target`` of the order-``order`` local expansion about ``center``.

    The expansion sums all sources (upsampled four-fold).  It requires
    ``|target - center| < radius`` and ``radius`` not exceeding the distance
    from ``center`` to the boundary.  An invalid center raises
    :class:`ExpansionError` unless ``fallback`` is set, in which case the
    target is evaluated by the near-field adaptive rule instead.
    """
    c = np.asarray(center, dtype=float)
    t = np.asarray(target, dtype=float)
    kernel = "laplace_single" if kind == "laplace" else "stokes_single"
    b = KERNELS[kernel][2]
    dens = _as_density(density, disc, b)
    if np.hypot(*(t - c)) >= radius:
        raise ExpansionError("target outside the expansion disc")
    if _distance_to_boundary(disc, c) < radius * (1 - 1e-9):
        if not fallback:
            raise ExpansionError("expansion center too close to the boundary")
        warnings.warn("QBX center too close to the boundary; using adaptive quadrature")
        val = eval_layer(disc, dens, EvalPlan(t[None]), kernel)
        return float(val[0]) if b == 1 else val[0]
    y, w, d = _upsampled_sources(disc, dens)
    if kind == "laplace":
        coef = _laplace_local_coeffs(c, y, w * d[:, 0], order)
        return _eval_laplace_expansion(coef, c, t)
    coefs = _stokes_local_coeffs(c, y, w[:, None] * d, order)
    return _eval_stokes_expansion(coefs, c, t)


def _qbx_near(disc, ib, dens_body, plan, kernel, near):
    """QBX replacement for the near-panel part of one panel body.

    Each target gets a center on the normal through its closest boundary
    point, half a panel length off the curve (on the target's side).  Only the
    near panels' sources (upsampled) enter the expansion; the rest were summed
    directly.
    """
    body = disc.bodies[ib]
    sl = disc.body_slice(ib)
    order = body.order
    plen = disc.panel_lengths()[sl]
    tx = plan.targets
    out = np.zeros((len(tx), KERNELS[kernel][1]))
    sub = Discretization([body])
    for t in np.nonzero(near.any(1))[0]:
        x = tx[t]
        d_loc = np.zeros_like(dens_body)
        for p in np.nonzero(near[t])[0]:
            d_loc[p * order:(p + 1) * order] = dens_body[p * order:(p + 1) * order]
        j = int(np.argmin(((disc.points[sl] - x) ** 2).sum(-1)))
        p = body.panel_of[j]
        lo = body.edges[max(p - 1, 0)]
        hi = body.edges[min(p + 2, len(body.edges) - 1)]
        s_star = _closest_param(body.curve, lo, hi, x, body.params[j])
        x0, dp0, _ = body.curve.derivatives(s_star)
        n0 = np.array([dp0[1], -dp0[0]]) / np.hypot(*dp0)
        dist = float(np.hypot(*(x - x0)))
        r = 0.5 * plen[j]
        side = 1.0 if (x - x0) @ n0 >= 0 else -1.0
        c = x0 + side * r * n0 if dist < r else x.copy()
        y, w, dv = _upsampled_sources(sub, d_loc)
        if kernel == "laplace_single":
            coef = _laplace_local_coeffs(c, y, w * dv[:, 0], plan.order)
            out[t, 0] = _eval_laplace_expansion(coef, c, x)
        else:
            coefs = _stokes_local_coeffs(c, y, w[:, None] * dv, plan.order)
            out[t] = _eval_stokes_expansion(coefs, c, x)
    return out


# ---------------------------------------------------------------------------
# public single-layer evaluators


def eval_laplace_single(disc: Discretization, mu, plan: EvalPlan):
    return eval_layer(disc, mu, plan, "laplace_single")


def eval_stokes_single(disc: Discretization, mu, plan: EvalPlan):
    return eval_layer(disc, mu, plan, "stokes_single")


# ---------------------------------------------------------------------------
# smooth on-surface operators


@numba.njit(cache=True)
def _lap_dlp_fill(px, py, nx, ny, w, kap, adjoint, A):
    n = px.shape[0]
    c = 1.0 / (2.0 * np.pi)
    for i in range(n):
        for j in range(n):
            if i == j:
                A[i, j] = -kap[i] / (4.0 * np.pi) * w[j]
            else:
                dx = px[i] - px[j]
                dy = py[i] - py[j]
                r2 = dx * dx + dy * dy
                if adjoint:
                    A[i, j] = c * (dx * nx[j] + dy * ny[j]) / r2 * w[j]
                else:
                    A[i, j] = -c * (dx * nx[i] + dy * ny[i]) / r2 * w[j]


@numba.njit(cache=True)
def _lap_dlp_apply(px, py, nx, ny, w, kap, adjoint, mu, out):
    n = px.shape[0]
    c = 1.0 / (2.0 * np.pi)
    for i in range(n):
        s = -kap[i] / (4.0 * np.pi) * w[i] * mu[i]
        for j in range(n):
            if i != j:
                dx = px[i] - px[j]
                dy = py[i] - py[j]
                r2 = dx * dx + dy * dy
                if adjoint:
                    s += c * (dx * nx[j] + dy * ny[j]) / r2 * w[j] * mu[j]
                else:
                    s -= c * (dx * nx[i] + dy * ny[i]) / r2 * w[j] * mu[j]
        out[i] = s


@numba.njit(cache=True)
def _stokes_dlp_fill(px, py, nx, ny, tx, ty, w, kap, adjoint, A):
    n = px.shape[0]
    c = 1.0 / np.pi
    for i in range(n):
        for j in range(n):
            if i == j:
                f = -kap[i] / (2.0 * np.pi) * w[j]
                A[2 * i, 2 * j] = f * tx[i] * tx[i]
                A[2 * i, 2 * j + 1] = f * tx[i] * ty[i]
                A[2 * i + 1, 2 * j] = f * ty[i] * tx[i]
                A[2 * i + 1, 2 * j + 1] = f * ty[i] * ty[i]
            else:
                dx = px[i] - px[j]
                dy = py[i] - py[j]
                r2 = dx * dx + dy * dy
                if adjoint:
                    # T(y, x) n_y with y - x = -r
                    rn = -(dx * nx[j] + dy * ny[j])
                    f = -c * rn / (r2 * r2) * w[j]
                else:
                    rn = dx * nx[i] + dy * ny[i]
                    f = -c * rn / (r2 * r2) * w[j]
                A[2 * i, 2 * j] = f * dx * dx
                A[2 * i, 2 * j + 1] = f * dx * dy
                A[2 * i + 1, 2 * j] = f * dy * dx
                A[2 * i + 1, 2 * j + 1] = f * dy * dy


@numba.njit(cache=True)
def _stokes_dlp_apply(px, py, nx, ny, tx, ty, w, kap, adjoint, mu, out):
    n = px.shape[0]
    c = 1.0 / np.pi
    for i in range(n):
        f = -kap[i] / (2.0 * np.pi) * w[i]
        tm = tx[i] * mu[2 * i] + ty[i] * mu[2 * i + 1]
        s0 = f * tx[i] * tm
        s1 = f * ty[i] * tm
        for j in range(n):
            if i != j:
                dx = px[i] - px[j]
                dy = py[i] - py[j]
                r2 = dx * dx + dy * dy
                if adjoint:
                    rn = -(dx * nx[j] + dy * ny[j])
                else:
                    rn = dx * nx[i] + dy * ny[i]
                g = -c * rn / (r2 * r2) * w[j] * (dx * mu[2 * j] + dy * mu[2 * j + 1])
                s0 += g * dx
                s1 += g * dy
        out[2 * i] = s0
        out[2 * i + 1] = s1


def _geom(disc):
    p, n = disc.points, disc.normals
    return (np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(p[:, 1]),
            np.ascontiguousarray(n[:, 0]), np.ascontiguousarray(n[:, 1]))


def laplace_K_matrix(disc: Discretization, adjoint=False):
    """Dense Nystrom matrix of K (``adjoint=False``) or K* (``adjoint=True``)."""
    A = np.empty((disc.n_nodes, disc.n_nodes))
    _lap_dlp_fill(*_geom(disc), disc.weights, disc.curvature, adjoint, A)
    return A


def stokes_traction_matrix(disc: Discretization, adjoint=False):
    """Dense Nystrom matrix of the traction operator (or the double layer, ``adjoint=True``).

    Unknowns are interleaved: index ``2 i + c`` is component ``c`` at node ``i``.
    """
    n = disc.n_nodes
    A = np.empty((2 * n, 2 * n))
    t = disc.tangents
    _stokes_dlp_fill(*_geom(disc), np.ascontiguousarray(t[:, 0]), np.ascontiguousarray(t[:, 1]),
                     disc.weights, disc.curvature, adjoint, A)
    return A


def apply_laplace_K(disc, mu, adjoint=False):
    mu = np.ascontiguousarray(mu, dtype=float)
    out = np.empty(disc.n_nodes)
    _lap_dlp_apply(*_geom(disc), disc.weights, disc.curvature, adjoint, mu, out)
    return out


def apply_stokes_traction(disc, mu, adjoint=False):
    mu = np.ascontiguousarray(np.asarray(mu, dtype=float).ravel())
    out = np.empty(2 * disc.n_nodes)
    t = disc.tangents
    _stokes_dlp_apply(*_geom(disc), np.ascontiguousarray(t[:, 0]), np.ascontiguousarray(t[:, 1]),
                      disc.weights, disc.curvature, adjoint, mu, out)
    return out.reshape(-1, 2)


def eval_laplace_K(disc: Discretization, mu):
    """On-surface values of K mu (principal value, kernel dG/dn_x)."""
    return apply_laplace_K(disc, _as_density(mu, disc, 1)[:, 0], adjoint=False)


def eval_laplace_Kstar(disc: Discretization, mu):
    """On-surface values of K* mu (double layer principal value)."""
    return apply_laplace_K(disc, _as_density(mu, disc, 1)[:, 0], adjoint=True)


def eval_stokes_traction(disc: Discretization, mu):
    """On-surface values of the traction operator applied to a vector density (N, 2)."""
    return apply_stokes_traction(disc, _as_density(mu, disc, 2), adjoint=False)


def eval_stokes_double(disc: Discretization, mu):
    """On-surface principal value of the Stokes double layer (N, 2)."""
    return apply_stokes_traction(disc, _as_density(mu, disc, 2), adjoint=True)
