"""GMRES with L2 diagonal rescaling, and a dense LU fallback."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres as _scipy_gmres

from .geometry import Discretization


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 500
    restart: int | None = None
    scaling: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be positive")


@dataclass
class SolveStats:
    iterations: int
    residual: float
    wall_time: float
    history: list = field(default_factory=list)
    method: str = "gmres"


class SolverFailure(RuntimeError):
    """GMRES did not reach the tolerance; carries the best iterate."""

    def __init__(self, message, solution, stats):
        super().__init__(message)
        self.solution = solution
        self.stats = stats


def l2_scaling(disc: Discretization, arity: int = 1):
    """Per-unknown weights sqrt(w_i) so that the scaled 2-norm approximates the L2 norm."""
    w = np.sqrt(disc.weights)
    return np.repeat(w, arity) if arity > 1 else w


def _as_callable(op):
    if callable(op):
        return op
    A = np.asarray(op)
    return A.__matmul__


def gmres(op, rhs, config: SolverConfig = SolverConfig(), weights=None):
    """Solve ``op x = rhs``.

    With ``config.scaling`` and ``weights`` given, GMRES runs on
    ``D op D^-1 (D x) = D rhs`` with ``D = diag(weights)`` and the tolerance
    applies to the scaled residual.  Raises :class:`SolverFailure` if the
    tolerance is not met within ``config.max_iter`` iterations.
    """
    t0 = time.perf_counter()
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    if weights is None and hasattr(op, "weights"):
        weights = op.weights
    apply = _as_callable(op)
    if config.scaling and weights is not None:
        d = np.asarray(weights, dtype=float)
        if d.shape != (n,):
            raise ValueError("scaling weights do not match the system size")
    else:
        d = np.ones(n)
    b = d * rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, time.perf_counter() - t0, [0.0])

    def mv(y):
        return d * apply(y / d)

    A = LinearOperator((n, n), matvec=mv, dtype=float)
    hist = [1.0]

    def cb(pr_norm):
        hist.append(float(pr_norm))

    restart = config.restart or min(config.max_iter, n)
    y, info = _scipy_gmres(A, b, rtol=config.tol, atol=0.0, restart=restart,
                           maxiter=max(1, -(-config.max_iter // restart)),
                           callback=cb, callback_type="pr_norm")
    res = float(np.linalg.norm(b - mv(y)) / bnorm)
    stats = SolveStats(len(hist) - 1, res, time.perf_counter() - t0, hist)
    x = y / d
    if info != 0 or res > config.tol * (1 + 1e-8):
        raise SolverFailure(f"GMRES stopped after {stats.iterations} iterations with "
                            f"relative residual {res:.3e} > {config.tol:.1e}", x, stats)
    return x, stats


def dense_solve(op, rhs):
    """Direct solve by pivoted LU; ``op`` is a matrix or an object with ``to_dense``."""
    t0 = time.perf_counter()
    A = op.to_dense() if hasattr(op, "to_dense") else np.asarray(op, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    with np.errstate(all="ignore"):
        lu, piv = sla.lu_factor(A, check_finite=True)
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.abs(np.diag(lu)).max() * len(A)):
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    x = sla.lu_solve((lu, piv), rhs)
    # one step of iterative refinement
    x += sla.lu_solve((lu, piv), rhs - A @ x)
    bn = np.linalg.norm(rhs)
    res = float(np.linalg.norm(A @ x - rhs) / bn) if bn else 0.0
    return x, SolveStats(0, res, time.perf_counter() - t0, [], method="dense")
