"""Square linear systems for the elastance, mobility, capacitance and resistance problems.

Density layout: Laplace densities are ``(N,)`` vectors; Stokes densities are
interleaved ``(2N,)`` vectors (``2 i + c`` = component ``c`` at node ``i``).
Bordered systems append their scalar unknowns after the node unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import quadrature as quad
from .geometry import Discretization, perp
from .kernels import INV_4PI, ROTLET_STRENGTH


class NeutralityError(ValueError):
    """Net charge or net force of the body data is not zero."""


NEUTRALITY_TOL = 1e-10


@dataclass
class AssembledSystem:
    """A square system ``matvec(x) = rhs``.

    ``weights`` are the per-unknown L2 scaling factors (sqrt of the node
    quadrature weight, 1 for scalar unknowns).  ``n_aux`` trailing unknowns
    are the bordered scalars (``aux_names`` describes them).
    """

    kind: str
    disc: Discretization
    matvec: Callable[[np.ndarray], np.ndarray]
    rhs: np.ndarray | None
    weights: np.ndarray
    n_aux: int = 0
    aux_names: tuple = ()
    source: np.ndarray | None = None
    matrix: np.ndarray | None = None
    arity: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.weights)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got {x.shape}")
        return self.matvec(x)

    def to_dense(self):
        if self.matrix is not None:
            return self.matrix
        eye = np.eye(self.size)
        return np.stack([self.matvec(e) for e in eye], axis=1)

    def with_rhs(self, rhs, source=None):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.size,):
            raise ValueError("rhs has the wrong length")
        return AssembledSystem(self.kind, self.disc, self.matvec, rhs, self.weights,
                               self.n_aux, self.aux_names, source, self.matrix,
                               self.arity, self.extra)


# ---------------------------------------------------------------------------
# source densities


def _per_body(values, disc, name, width=None):
    v = np.asarray(values, dtype=float)
    shape = (disc.n_bodies,) if width is None else (disc.n_bodies, width)
    if v.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def make_sigma(disc: Discretization, q, check_neutral: bool = True):
    """Constant-per-body density carrying charge ``q_i`` on body ``i``.

    The net charge must vanish unless ``check_neutral`` is False.
    """
    q = _per_body(q, disc, "charges")
    tot = q.sum()
    if check_neutral and abs(tot) > NEUTRALITY_TOL * max(1.0, np.abs(q).sum()):
        raise NeutralityError(f"total charge sum(q_i) = {tot:.3e} must vanish")
    return (q / disc.lengths)[disc.body]


def make_rho(disc: Discretization, F, T, check_neutral: bool = True):
    """Density carrying force ``F_i`` and torque ``T_i``; shape (N, 2).

    The net force must vanish unless ``check_neutral`` is False.
    """
    F = _per_body(F, disc, "forces", 2)
    T = _per_body(T, disc, "torques")
    net = F.sum(0)
    if check_neutral and np.abs(net).max() > NEUTRALITY_TOL * max(1.0, np.abs(F).sum()):
        raise NeutralityError(f"net force sum(F_i) = ({net[0]:.3e}, {net[1]:.3e}) must vanish")
    b = disc.body
    return (F / disc.lengths[:, None])[b] + (T / disc.second_moments)[b, None] * disc.relative_perp()


# ---------------------------------------------------------------------------
# completion operators


def _laplace_L(disc, mu):
    return disc.body_integral(mu)[disc.body]


def _laplace_L_matrix(disc):
    same = disc.body[:, None] == disc.body[None, :]
    return same * disc.weights[None, :]


def _stokes_L(disc, mu2):
    """mu2 is (N, 2); returns (N, 2)."""
    xp = disc.relative_perp()
    f = disc.body_integral(mu2)
    t = disc.body_integral((xp * mu2).sum(1))
    return f[disc.body] + xp * t[disc.body][:, None]


def _stokes_L_matrix(disc):
    n = disc.n_nodes
    xp = disc.relative_perp()
    same = (disc.body[:, None] == disc.body[None, :]) * disc.weights[None, :]
    L = np.zeros((n, 2, n, 2))
    for a in range(2):
        L[:, a, :, a] += same
        for b in range(2):
            L[:, a, :, b] += xp[:, a, None] * same * xp[None, :, b]
    return L.reshape(2 * n, 2 * n)


def _dense_ok(rows):
    return rows <= quad.DENSE_LIMIT


def node_scaling(disc, arity=1):
    w = np.sqrt(disc.weights)
    return np.repeat(w, arity) if arity > 1 else w


# ---------------------------------------------------------------------------
# elastance and mobility


def elastance_operator(disc: Discretization, dense=None) -> AssembledSystem:
    """mu -> (I/2 + K + L) mu."""
    n = disc.n_nodes
    dense = _dense_ok(n) if dense is None else dense
    if dense:
        A = quad.laplace_K_matrix(disc) + _laplace_L_matrix(disc)
        A[np.diag_indices(n)] += 0.5
        mv = A.__matmul__
    else:
        A = None

        def mv(x):
            return 0.5 * x + quad.apply_laplace_K(disc, x) + _laplace_L(disc, x)
    return AssembledSystem("elastance", disc, mv, None, node_scaling(disc), matrix=A)


def elastance_rhs(disc: Discretization, q):
    sigma = make_sigma(disc, q)
    return -(0.5 * sigma + quad.apply_laplace_K(disc, sigma)), sigma


def elastance_system(disc: Discretization, q, dense=None) -> AssembledSystem:
    op = elastance_operator(disc, dense)
    rhs, sigma = elastance_rhs(disc, q)
    return op.with_rhs(rhs, sigma)


def mobility_operator(disc: Discretization, dense=None) -> AssembledSystem:
    """mu -> (I/2 + traction operator + L) mu, interleaved vector densities."""
    n = disc.n_nodes
    dense = _dense_ok(2 * n) if dense is None else dense
    if dense:
        A = quad.stokes_traction_matrix(disc) + _stokes_L_matrix(disc)
        A[np.diag_indices(2 * n)] += 0.5
        mv = A.__matmul__
    else:
        A = None

        def mv(x):
            m2 = x.reshape(-1, 2)
            out = 0.5 * m2 + quad.apply_stokes_traction(disc, m2) + _stokes_L(disc, m2)
            return out.ravel()
    return AssembledSystem("mobility", disc, mv, None, node_scaling(disc, 2), matrix=A,
                           arity=2)


def mobility_rhs(disc: Discretization, F, T):
    rho = make_rho(disc, F, T)
    out = -(0.5 * rho + quad.apply_stokes_traction(disc, rho))
    return out.ravel(), rho


def mobility_system(disc: Discretization, F, T, dense=None) -> AssembledSystem:
    op = mobility_operator(disc, dense)
    rhs, rho = mobility_rhs(disc, F, T)
    return op.with_rhs(rhs, rho)


# ---------------------------------------------------------------------------
# bordered capacitance / resistance


def _log_source_matrix(disc):
    """G(x_i, c_k) for every node and body centroid: (N, nb)."""
    r = disc.points[:, None, :] - disc.centroids[None, :, :]
    return -0.25 / np.pi * np.log((r**2).sum(-1))


def _integration_matrix(disc):
    nb = disc.n_bodies
    B = np.zeros((nb, disc.n_nodes))
    B[disc.body, np.arange(disc.n_nodes)] = disc.weights
    return B


def capacitance_system(disc: Discretization, phi=None, dense=None) -> AssembledSystem:
    """Bordered completed double-layer system for prescribed body potentials.

    Unknowns ``(mu, c_inf)``; rows ``(I/2 + K*) mu + sum_k a_k G(x, c_k) + c_inf = phi``
    with ``a_k = int_k mu``, plus ``sum_k a_k = 0``.  The exterior potential is
    ``u = D mu + sum_k a_k G(., c_k) + c_inf`` and ``a_k`` is the charge of body k.
    """
    n = disc.n_nodes
    dense = _dense_ok(n + 1) if dense is None else dense
    Gc = _log_source_matrix(disc)
    B = _integration_matrix(disc)
    if dense:
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = quad.laplace_K_matrix(disc, adjoint=True) + Gc @ B
        A[np.arange(n), np.arange(n)] += 0.5
        A[:n, n] = 1.0
        A[n, :n] = B.sum(0)
        mv = A.__matmul__
    else:
        A = None

        def mv(x):
            mu, c = x[:n], x[n]
            a = B @ mu
            top = 0.5 * mu + quad.apply_laplace_K(disc, mu, adjoint=True) + Gc @ a + c
            return np.append(top, a.sum())
    w = np.append(node_scaling(disc), 1.0)
    sys = AssembledSystem("capacitance", disc, mv, None, w, n_aux=1, aux_names=("u_inf",),
                          matrix=A)
    if phi is not None:
        phi = _per_body(phi, disc, "potentials")
        sys = sys.with_rhs(np.append(phi[disc.body], 0.0))
    return sys


def capacitance_outputs(disc, x):
    """Charges and potential at infinity from a capacitance solution."""
    n = disc.n_nodes
    return disc.body_integral(x[:n]), float(x[n])


def _stokeslet_rotlet_matrices(disc):
    """Velocity at nodes per unit centroid force (N, 2, nb, 2) and torque (N, 2, nb)."""
    r = disc.points[:, None, :] - disc.centroids[None, :, :]
    r2 = (r**2).sum(-1)
    S = r[..., :, None] * r[..., None, :] / r2[..., None, None]
    S[..., 0, 0] -= 0.5 * np.log(r2)
    S[..., 1, 1] -= 0.5 * np.log(r2)
    S *= INV_4PI
    R = ROTLET_STRENGTH * perp(r) / r2[..., None]
    return S.transpose(0, 2, 1, 3), R.transpose(0, 2, 1)


def _moment_matrices(disc):
    """Rows mapping interleaved mu to per-body force (2 nb) and torque (nb) moments."""
    n, nb = disc.n_nodes, disc.n_bodies
    xp = disc.relative_perp()
    Mf = np.zeros((nb, 2, n, 2))
    Mt = np.zeros((nb, n, 2))
    idx = np.arange(n)
    for c in range(2):
        Mf[disc.body, c, idx, c] = disc.weights
        Mt[disc.body, idx, c] = disc.weights * xp[:, c]
    return Mf.reshape(2 * nb, 2 * n), Mt.reshape(nb, 2 * n)


def resistance_system(disc: Discretization, v=None, omega=None, dense=None) -> AssembledSystem:
    """Bordered completed Stokes double-layer system for prescribed rigid motions.

    Unknowns ``(mu, u_inf)``; rows
    ``(I/2 + D) mu + sum_k [S(x, c_k) F_k + R(x, c_k) T_k] + u_inf = v_i + omega_i (x - c_i)^perp``
    with ``F_k = int_k mu`` and ``T_k = int_k (y - c_k)^perp . mu`` and two rows
    ``sum_k F_k = 0``.  ``F_k`` and ``T_k`` are the force and torque the bodies
    exert on the fluid.
    """
    n, nb = disc.n_nodes, disc.n_bodies
    size = 2 * n + 2
    dense = _dense_ok(size) if dense is None else dense
    S, R = _stokeslet_rotlet_matrices(disc)
    Mf, Mt = _moment_matrices(disc)
    S2 = S.reshape(2 * n, 2 * nb)
    R2 = R.reshape(2 * n, nb)
    comp = S2 @ Mf + R2 @ Mt
    sumF = np.zeros((2, 2 * nb))
    sumF[0, 0::2] = 1.0
    sumF[1, 1::2] = 1.0
    ones = np.zeros((2 * n, 2))
    ones[0::2, 0] = 1.0
    ones[1::2, 1] = 1.0
    if dense:
        A = np.zeros((size, size))
        A[:2 * n, :2 * n] = quad.stokes_traction_matrix(disc, adjoint=True) + comp
        A[np.arange(2 * n), np.arange(2 * n)] += 0.5
        A[:2 * n, 2 * n:] = ones
        A[2 * n:, :2 * n] = sumF @ Mf
        mv = A.__matmul__
    else:
        A = None

        def mv(x):
            mu = x[:2 * n]
            top = (0.5 * mu + quad.apply_stokes_traction(disc, mu, adjoint=True).ravel()
                   + S2 @ (Mf @ mu) + R2 @ (Mt @ mu) + ones @ x[2 * n:])
            return np.concatenate([top, sumF @ (Mf @ mu)])
    w = np.append(node_scaling(disc, 2), [1.0, 1.0])
    sys = AssembledSystem("resistance", disc, mv, None, w, n_aux=2,
                          aux_names=("u_inf_x", "u_inf_y"), matrix=A, arity=2,
                          extra={"force_moments": Mf, "torque_moments": Mt})
    if v is not None:
        v = _per_body(v, disc, "velocities", 2)
        om = _per_body(np.zeros(nb) if omega is None else omega, disc, "angular velocities")
        rhs = v[disc.body] + om[disc.body, None] * disc.relative_perp()
        sys = sys.with_rhs(np.append(rhs.ravel(), [0.0, 0.0]))
    return sys


def resistance_outputs(disc, x):
    """Forces (nb, 2), torques (nb,) and ambient velocity from a resistance solution."""
    n = disc.n_nodes
    mu = x[:2 * n].reshape(-1, 2)
    F = disc.body_integral(mu)
    T = disc.body_integral((disc.relative_perp() * mu).sum(1))
    return F, T, x[2 * n:].copy()
