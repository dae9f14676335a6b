"""Iterative solvers: proximal gradient for the weight block, CG for the
state block, and the power-iteration spectral estimate that bounds the
valid proximal step size.

This module works in the transposed frame where rows of ``w`` are the
sparsity groups; the trainer transposes weight blocks on the way in and out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import STAGE_POWER, make_rng
from .prox import prox_l20_rows, step

__all__ = [
    "PgmConfig",
    "CgConfig",
    "CgError",
    "grad_psi",
    "smooth_objective",
    "composite_objective",
    "pgm",
    "p_stationarity_residual",
    "spectral_norm",
    "cg_solve",
    "solve_v",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PgmConfig:
    """Proximal gradient settings: a fixed number of inner iterations.

    Stationarity checking is a diagnostic, not a stopping rule; the loop
    always runs exactly ``L`` iterations.
    """

    L: int = 1
    beta: float = 0.00072
    check_stationarity: bool = False
    stationarity_tol: float = 1e-6

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.L < 0:
            raise ValueError(f"L must be nonnegative, got {self.L}")


@dataclass(frozen=True)
class CgConfig:
    """Conjugate gradient settings; ``max_iters=None`` means 10x dimension."""

    tol: float = 1e-8
    max_iters: int | None = None

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")


class CgError(RuntimeError):
    """CG failed to reach the requested residual within the iteration cap."""

    def __init__(self, residual, tol, iters):
        self.residual = residual
        self.tol = tol
        self.iters = iters
        super().__init__(
            f"conjugate gradient reached relative residual {residual:.3e} "
            f"after {iters} iterations (target {tol:.1e})"
        )


def grad_psi(w, u, v, tau, gamma):
    """Gradient of ``(tau/2) ||u - v w||^2 + (gamma/2) ||w||^2`` in ``w``."""
    if v.shape[1] != w.shape[0] or u.shape != (v.shape[0], w.shape[1]):
        raise ValueError(f"grad_psi shape mismatch: u {u.shape}, v {v.shape}, w {w.shape}")
    return tau * (v.T @ (v @ w - u)) + gamma * w


def smooth_objective(w, u, v, tau, gamma):
    """``(tau/2) ||u - v w||^2 + (gamma/2) ||w||^2``."""
    r = u - v @ w
    return 0.5 * tau * float((r * r).sum()) + 0.5 * gamma * float((w * w).sum())


def composite_objective(w, u, v, tau, gamma, lam):
    """Smooth part plus ``lam`` times the nonzero-row count of ``w``."""
    nnz_rows = int(np.any(w != 0.0, axis=1).sum())
    return smooth_objective(w, u, v, tau, gamma) + lam * nnz_rows


def pgm(u, v, w0, tau, gamma, lam, cfg):
    """Run exactly ``cfg.L`` proximal-gradient iterations from ``w0``.

    Each iteration takes a gradient step on the smooth part followed by
    rowwise hard thresholding.  For step sizes below
    ``1 / (tau ||v||_2^2 + gamma)`` the composite objective is
    non-increasing and the iterates converge to a point satisfying the
    proximal fixed-point inclusion.
    """
    w = w0.copy()
    for _ in range(cfg.L):
        w = prox_l20_rows(w - cfg.beta * grad_psi(w, u, v, tau, gamma), cfg.beta, lam)
    if cfg.check_stationarity:
        res = p_stationarity_residual(w, u, v, tau, gamma, lam, cfg.beta)
        if res > cfg.stationarity_tol:
            logger.warning("pgm iterate is not stationary: residual %.3e", res)
        else:
            logger.debug("pgm stationarity residual %.3e", res)
    return w


def p_stationarity_residual(w, u, v, tau, gamma, lam, beta):
    """Worst rowwise violation of the proximal fixed-point conditions.

    A point is a fixed point of the thresholded gradient map iff every
    nonzero row has zero gradient and norm at least ``sqrt(2 beta lam)``,
    and every zero row has gradient norm at most ``sqrt(2 lam / beta)``.
    Returns the maximum violation over rows; zero iff stationary for this
    ``beta``.
    """
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    g = grad_psi(w, u, v, tau, gamma)
    g_rows = np.linalg.norm(g, axis=1)
    w_rows = np.linalg.norm(w, axis=1)
    nonzero = w_rows != 0.0
    keep_floor = np.sqrt(2.0 * beta * lam)
    zero_cap = np.sqrt(2.0 * lam / beta)
    viol = np.where(
        nonzero,
        np.maximum(g_rows, np.maximum(0.0, keep_floor - w_rows)),
        np.maximum(0.0, g_rows - zero_cap),
    )
    return float(viol.max()) if viol.size else 0.0


def spectral_norm(v, iters=100, rng=None):
    """Power-iteration estimate of the largest singular value of ``v``."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    v = np.asarray(v, dtype=np.float64)
    if not v.any():
        return 0.0
    if rng is None:
        rng = make_rng(0, STAGE_POWER)
    x = rng.standard_normal(v.shape[1])
    for _ in range(iters):
        y = v @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # x landed in the null space; a fresh draw escapes it a.s.
            x = rng.standard_normal(v.shape[1])
            continue
        x = v.T @ (y / ny)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            x = rng.standard_normal(v.shape[1])
            continue
        x /= nx
    return float(np.linalg.norm(v @ x))


def cg_solve(a, b, x0, tol, max_iters, callback=None):
    """Multi-RHS conjugate gradients for SPD ``a``; columns are independent.

    Each column runs its own CG (scalar steps are computed per column and
    converged columns freeze), so the result is independent of how columns
    are batched.  Stops once every column has relative residual at most
    ``tol``; raises ``CgError`` otherwise.

    Returns ``(x, iterations_used)``.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    r = b - a @ x
    p = r.copy()
    col_target = np.linalg.norm(b, axis=0)
    col_target = tol * np.where(col_target > 0.0, col_target, 1.0)
    rs = (r * r).sum(axis=0)

    for it in range(max_iters):
        active = np.sqrt(rs) > col_target
        if not active.any():
            return x, it
        ap = a @ p
        pap = (p * ap).sum(axis=0)
        safe = active & (pap > 0.0)
        alpha = np.divide(rs, pap, out=np.zeros_like(rs), where=safe)
        x += alpha * p
        r -= alpha * ap
        rs_new = (r * r).sum(axis=0)
        beta = np.divide(rs_new, rs, out=np.zeros_like(rs), where=rs > 0.0)
        p = r + beta * p
        rs = rs_new
        if callback is not None:
            callback(x.copy())

    if np.all(np.sqrt(rs) <= col_target):
        return x, max_iters
    achieved = float(np.linalg.norm(b - a @ x) / max(np.linalg.norm(b), 1e-300))
    raise CgError(achieved, tol, max_iters)


def solve_v(w_next, u_next, u_cur, tau, pi, cfg, v_init):
    """Solve the hidden-state block: the SPD system

        (tau w^T w + pi I) v = tau w^T u_next + pi step(u_cur)

    by conjugate gradients, warm-started from ``v_init``.  ``pi > 0``
    guarantees positive definiteness.  The answer is independent of the
    warm start up to the residual tolerance.
    """
    if pi <= 0.0:
        raise ValueError(f"pi must be positive for an SPD system, got {pi}")
    if w_next.shape[0] != u_next.shape[0] or w_next.shape[1] != u_cur.shape[0]:
        raise ValueError(
            f"solve_v shape mismatch: w {w_next.shape}, u_next {u_next.shape}, u_cur {u_cur.shape}"
        )
    if v_init.shape != u_cur.shape:
        raise ValueError(f"warm start {v_init.shape} does not match {u_cur.shape}")

    d = w_next.shape[1]
    a = tau * (w_next.T @ w_next)
    a[np.diag_indices(d)] += pi
    rhs = tau * (w_next.T @ u_next) + pi * step(u_cur)
    max_iters = cfg.max_iters if cfg.max_iters is not None else 10 * d
    x, _ = cg_solve(a, rhs, v_init, cfg.tol, max_iters)
    return x
