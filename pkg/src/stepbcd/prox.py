"""Activation maps and closed-form solvers for the per-block sub-problems.

All operations here are pure and act entrywise, columnwise, or rowwise, so
they are trivially parallelizable and independent of evaluation order.

Knife-edge equalities in the three thresholding solvers are resolved by the
no-change branch (keep ``b`` / keep the row), so measure-zero ties never
inject perturbations.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "step",
    "hardmax",
    "hardmax_columns",
    "norm_l20",
    "prox_hardmax_column",
    "prox_hardmax_matrix",
    "prox_step_scalar",
    "prox_step_matrix",
    "prox_l20_rows",
]


def step(x):
    """Entrywise 0/1 activation: 1 for strictly positive entries, else 0.

    Note ``step(0) == 0``; there is no epsilon floor, so any positive
    denormal maps to 1.
    """
    return np.where(np.asarray(x, dtype=np.float64) > 0.0, 1.0, 0.0)


def hardmax(a):
    """Vector hardmax: 1 at every coordinate attaining the maximum, else 0.

    Ties produce multiple ones; the all-equal vector maps to all ones.
    Class decisions resolve ties separately (see ``metrics``).
    """
    a = np.asarray(a, dtype=np.float64)
    return (a == a.max()).astype(np.float64)


def hardmax_columns(a):
    """Columnwise hardmax of a matrix."""
    a = np.asarray(a, dtype=np.float64)
    return (a == a.max(axis=0, keepdims=True)).astype(np.float64)


def norm_l20(w):
    """Number of nonzero columns of ``w`` (the group-sparsity count)."""
    return int(np.any(np.asarray(w) != 0.0, axis=0).sum())


def prox_hardmax_column(y_index, b, mu, eps_tiny=1e-10):
    """Minimize ``||e_y - hardmax(u)||^2 + mu * ||u - b||^2`` over u.

    The minimum is attained either at ``b`` itself or, in the limit, at
    ``b + eps * e_y`` with ``eps`` just above ``delta = max(b) - b[y_index]``
    (which makes the hot coordinate the strict maximum and zeroes the
    hardmax term).  Comparing the two candidate values reduces to comparing
    ``mu * delta^2`` against ``||e_y - hardmax(b)||^2``; the epsilon limit
    is realized as ``delta + eps_tiny``.  Exact equality keeps ``b``.
    """
    b = np.asarray(b, dtype=np.float64)
    delta = b.max() - b[y_index]
    hm = hardmax(b)
    miss = hm.sum() + 1.0 - 2.0 * hm[y_index]  # == ||e_y - hardmax(b)||^2
    if mu * delta * delta >= miss:
        return b.copy()
    out = b.copy()
    out[y_index] += delta + eps_tiny
    return out


def prox_hardmax_matrix(b, y, tau, n=None, eps_tiny=1e-10):
    """Columnwise output-layer update: prox of the hardmax loss around ``b``.

    Solves, for each column s with one-hot label y_s,

        min_u  (1/(2n)) ||y_s - hardmax(u)||^2 + (tau/2) ||u - b_s||^2

    which is ``prox_hardmax_column`` with ``mu = tau * n``.  ``n`` defaults
    to the number of columns and is exposed for mini-batch weighting.

    Parameters
    ----------
    b : (m, N) array
        Linear predictions (current weights times previous activations).
    y : (m, N) array
        One-hot labels; a non-one-hot column is a hard error.
    """
    b = np.asarray(b, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if b.shape != y.shape:
        raise ValueError(f"prediction/label shape mismatch: {b.shape} vs {y.shape}")
    bad = ~(np.all((y == 0.0) | (y == 1.0), axis=0) & (y.sum(axis=0) == 1.0))
    if np.any(bad):
        raise ValueError(f"label column {int(np.argmax(bad))} is not one-hot")
    if n is None:
        n = b.shape[1]

    cols = np.arange(b.shape[1])
    y_idx = np.argmax(y, axis=0)
    colmax = b.max(axis=0)
    hot = b[y_idx, cols]
    delta = colmax - hot
    n_max = (b == colmax).sum(axis=0)
    miss = n_max + 1.0 - 2.0 * (hot == colmax)  # ||y_s - hardmax(b_s)||^2
    bump = tau * n * delta * delta < miss

    out = b.copy()
    out[y_idx[bump], cols[bump]] += delta[bump] + eps_tiny
    return out


def prox_step_scalar(a, b, rho, eps_tiny=1e-10):
    """Minimize ``(a - step(u))^2 + rho * (u - b)^2`` over scalar u.

    With ``t = 2a - 1`` the minimizer is:

    * ``b > 0``:  ``b`` if ``t > -rho b^2``, else 0 (equality keeps ``b``);
    * ``b <= 0``: ``b`` if ``t < rho b^2`` (or equal), else the one-sided
      limit 0+, realized as ``min(sqrt(t/rho) + b, eps_tiny)`` (real since
      ``t > rho b^2 >= 0`` there).
    """
    t = 2.0 * a - 1.0
    if b > 0.0:
        return b if t >= -rho * b * b else 0.0
    if t > rho * b * b:
        return min(np.sqrt(t / rho) + b, eps_tiny)
    return b


def prox_step_matrix(v_target, b, tau, pi, eps_tiny=1e-10):
    """Entrywise hidden-layer update: fit ``u`` to ``b`` against a 0/1 target.

    Solves, independently per entry with ``a = v_target[j, r]`` and
    ``b = b[j, r]``,

        min_u  (tau/2) (u - b)^2 + (pi/2) (a - step(u))^2

    i.e. ``prox_step_scalar`` with ``rho = tau / pi``.  The branch tests are
    carried out in the homogeneous form ``pi * t`` vs ``-/+ tau * b^2`` so no
    division is involved.
    """
    v_target = np.asarray(v_target, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if v_target.shape != b.shape:
        raise ValueError(f"target/prediction shape mismatch: {v_target.shape} vs {b.shape}")

    t = 2.0 * v_target - 1.0
    lhs = pi * t
    quad = tau * b * b
    out = b.copy()
    out[(b > 0.0) & (lhs < -quad)] = 0.0
    bump = (b <= 0.0) & (lhs > quad)
    if np.any(bump):
        tb = t[bump]
        out[bump] = np.minimum(np.sqrt(tb * (pi / tau)) + b[bump], eps_tiny)
    return out


def prox_l20_rows(h, beta, lam):
    """Rowwise hard thresholding: the prox of ``lam * (nonzero-row count)``.

    Row s of the result is 0 when ``||h_s|| < sqrt(2 beta lam)``, ``h_s``
    when strictly above, and ``h_s`` on exact equality (keep).  Rows are
    never shrunk, only kept or zeroed.
    """
    h = np.asarray(h, dtype=np.float64)
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    out = h.copy()
    out[np.linalg.norm(h, axis=1) < np.sqrt(2.0 * beta * lam)] = 0.0
    return out
