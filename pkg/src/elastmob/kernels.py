"""Laplace and Stokes free-space kernels (unit viscosity).

All functions broadcast over leading dimensions: points are ``(..., 2)``
arrays, scalar kernels return ``(...)`` and Stokes kernels ``(..., 2, 2)``.
"""
from __future__ import annotations

import numpy as np

INV_2PI = 1.0 / (2.0 * np.pi)
INV_4PI = 1.0 / (4.0 * np.pi)

#: rotlet velocity per unit torque: u = ROTLET_STRENGTH * (x - c)^perp / |x - c|^2
ROTLET_STRENGTH = INV_4PI


class CoincidentPointsError(ValueError):
    """A kernel was evaluated with source and target at the same point."""


def _diff(x, y):
    r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = r[..., 0] ** 2 + r[..., 1] ** 2
    if np.any(r2 == 0.0):
        raise CoincidentPointsError("kernel evaluated at coincident points")
    return r, r2


def laplace_G(x, y):
    """-log|x - y| / (2 pi)."""
    _, r2 = _diff(x, y)
    return -0.25 / np.pi * np.log(r2)


def laplace_grad_G(x, y):
    """Gradient of G with respect to x."""
    r, r2 = _diff(x, y)
    return -INV_2PI * r / r2[..., None]


def laplace_K_kernel(x, n_x, y):
    """dG(x, y)/dn_x: kernel of the on-surface normal-derivative operator K."""
    r, r2 = _diff(x, y)
    return -INV_2PI * (r * np.asarray(n_x)).sum(-1) / r2


def laplace_Kstar_kernel(x, y, n_y):
    """dG(x, y)/dn_y: kernel of the double layer (K*)."""
    r, r2 = _diff(x, y)
    return INV_2PI * (r * np.asarray(n_y)).sum(-1) / r2


def laplace_K_diag_limit(kappa):
    """Smooth-curve limit of dG/dn_x (and dG/dn_y) as y -> x along the curve."""
    return -INV_4PI * np.asarray(kappa, dtype=float)


def stokeslet(x, y):
    """Stokeslet G_ij(x, y) = (-log|r| delta_ij + r_i r_j / |r|^2) / (4 pi)."""
    r, r2 = _diff(x, y)
    out = r[..., :, None] * r[..., None, :] / r2[..., None, None]
    diag = -0.5 * np.log(r2)
    out[..., 0, 0] += diag
    out[..., 1, 1] += diag
    return INV_4PI * out


def stokes_pressure(x, y):
    """Pressure vector p_j such that p = p_j f_j for a point force f at y."""
    r, r2 = _diff(x, y)
    return INV_2PI * r / r2[..., None]


def stresslet(x, y):
    """T_ijk(x, y) = -(1/pi) r_i r_j r_k / |r|^4, r = x - y. Shape (..., 2, 2, 2)."""
    r, r2 = _diff(x, y)
    return (-1.0 / np.pi) * (r[..., :, None, None] * r[..., None, :, None]
                             * r[..., None, None, :]) / (r2**2)[..., None, None, None]


def stresslet_traction_kernel(x, n_x, y):
    """Block M_km = T_kml(x, y) n_x,l: traction at x (normal n_x) per unit force at y."""
    r, r2 = _diff(x, y)
    rn = (r * np.asarray(n_x)).sum(-1)
    return (-1.0 / np.pi) * (rn / r2**2)[..., None, None] * (r[..., :, None] * r[..., None, :])


def stokes_dlp_kernel(y, n_y, x):
    """Block M_ij = T_jik(y, x) n_y,k: velocity at x per unit double-layer density at y."""
    r, r2 = _diff(y, x)
    rn = (r * np.asarray(n_y)).sum(-1)
    return (-1.0 / np.pi) * (rn / r2**2)[..., None, None] * (r[..., :, None] * r[..., None, :])


def stokes_diag_limits(kappa, tangent):
    """Diagonal limit shared by the traction and double-layer kernels: -(kappa/2pi) t t^T."""
    kappa = np.asarray(kappa, dtype=float)
    t = np.asarray(tangent, dtype=float)
    return (-kappa / (2.0 * np.pi))[..., None, None] * (t[..., :, None] * t[..., None, :])


def rotlet(x, c):
    """Velocity at x of a unit point torque at c."""
    r, r2 = _diff(x, c)
    out = np.empty_like(r)
    out[..., 0] = -r[..., 1]
    out[..., 1] = r[..., 0]
    return ROTLET_STRENGTH * out / r2[..., None]
