"""Outer block-coordinate loop, penalty objective, and descent monitoring.

One outer iteration sweeps the blocks from the output layer inward:
the output pre-activation (hardmax prox), the output weights (proximal
gradient), then for each hidden layer the state solve (CG), the
pre-activation fit (entrywise step prox), and the weights.  Every
sub-problem consumes exactly the iterate versions the update scheme
prescribes: the pre-activation targets ``b = W_i V_(i-1)`` always use the
not-yet-updated weights and states from the previous sweep.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .core import TrainState, forward_blocks, init_gaussian
from .dataio import Dataset
from .prox import hardmax_columns, norm_l20, prox_hardmax_matrix, prox_step_matrix, step
from .solvers import CgConfig, PgmConfig, pgm, solve_v, spectral_norm

__all__ = [
    "BcdRecord",
    "BcdReport",
    "objective_f",
    "bcd_iteration",
    "train",
    "check_descent",
]

logger = logging.getLogger(__name__)

REPORT_FIELDS = ("k", "F", "loss", "l20", "frob", "upen", "vpen", "dW", "dV", "seconds")


@dataclass(frozen=True)
class BcdRecord:
    """One outer-iteration snapshot: objective breakdown and block motion.

    ``dw``/``dv`` are the summed squared Frobenius changes of the weight
    and state blocks relative to the previous iterate.
    """

    k: int
    f: float
    loss: float
    l20: float
    frob: float
    upen: float
    vpen: float
    dw: float
    dv: float
    seconds: float

    def row(self):
        return (self.k, self.f, self.loss, self.l20, self.frob, self.upen, self.vpen, self.dw, self.dv, self.seconds)


@dataclass
class BcdReport:
    """Per-iteration records; row 0 is the initial state."""

    records: list[BcdRecord]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_FIELDS)
            for rec in self.records:
                writer.writerow([rec.k] + [f"{x:.17g}" for x in rec.row()[1:]])

    @classmethod
    def from_csv(cls, path):
        records = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if tuple(header) != REPORT_FIELDS:
                raise ValueError(f"unexpected report header {header}")
            for row in reader:
                records.append(BcdRecord(int(row[0]), *(float(x) for x in row[1:])))
        return cls(records)

    @property
    def f_values(self):
        return [rec.f for rec in self.records]


def objective_f(state, data, hp):
    """Penalty objective and its term breakdown.

    F = (1/2N) ||Y - hardmax(U_h)||^2
        + sum_i (lam * nnz_cols(W_i) + (gamma/2) ||W_i||^2)
        + (tau/2) sum_i ||U_i - W_i V_(i-1)||^2
        + (pi/2) sum_(i<h) ||V_i - step(U_i)||^2

    Returns ``(F, terms)`` with terms keyed loss/l20/frob/upen/vpen.
    """
    h = len(state.W)
    n = data.X.shape[1]
    if state.U[-1].shape != data.Y.shape:
        raise ValueError(f"output block {state.U[-1].shape} does not match labels {data.Y.shape}")

    diff = data.Y - hardmax_columns(state.U[-1])
    loss = 0.5 / n * float((diff * diff).sum())
    l20 = hp.lam * sum(norm_l20(w) for w in state.W)
    frob = 0.5 * hp.gamma * sum(float((w * w).sum()) for w in state.W)

    upen = 0.0
    v_in = data.X
    for i in range(h):
        r = state.U[i] - state.W[i] @ v_in
        upen += float((r * r).sum())
        if i < h - 1:
            v_in = state.V[i]
    upen *= 0.5 * hp.tau

    vpen = 0.0
    for i in range(h - 1):
        r = state.V[i] - step(state.U[i])
        vpen += float((r * r).sum())
    vpen *= 0.5 * hp.pi

    terms = {"loss": loss, "l20": l20, "frob": frob, "upen": upen, "vpen": vpen}
    return loss + l20 + frob + upen + vpen, terms


def _pgm_update(u_new, v_old, w_old, hp, cfg, derive_beta):
    """Weight-block step in the transposed frame (rows = columns of W)."""
    if derive_beta:
        sigma = spectral_norm(v_old)
        cfg = replace(cfg, beta=0.9 / (hp.tau * sigma * sigma + hp.gamma))
    return pgm(u_new.T, v_old.T, w_old.T, hp.tau, hp.gamma, hp.lam, cfg).T


def bcd_iteration(state, data, hp, pgm_cfg=None, cg_cfg=None, derive_beta=False):
    """One outer sweep; returns a new state without mutating the input.

    Update order for h layers: U_h, W_h, then for i = h-1 down to 1 the
    triple V_i, U_i, W_i.  Staleness discipline: each ``b = W_i V_(i-1)``
    target and each PGM data matrix ``V_(i-1)`` uses the previous sweep's
    values; the state solve for V_i uses the just-updated W_(i+1), U_(i+1)
    and the previous U_i.
    """
    if pgm_cfg is None:
        pgm_cfg = PgmConfig(L=hp.L, beta=hp.beta)
    if cg_cfg is None:
        cg_cfg = CgConfig()
    h = len(state.W)

    def v_in_old(i):
        return data.X if i == 0 else state.V[i - 1]

    new_w = list(state.W)
    new_u = list(state.U)
    new_v = list(state.V)

    top = h - 1
    b_top = state.W[top] @ v_in_old(top)
    new_u[top] = prox_hardmax_matrix(b_top, data.Y, hp.tau, n=data.X.shape[1], eps_tiny=hp.eps_tiny)
    new_w[top] = _pgm_update(new_u[top], v_in_old(top), state.W[top], hp, pgm_cfg, derive_beta)

    for i in range(h - 2, -1, -1):
        new_v[i] = solve_v(new_w[i + 1], new_u[i + 1], state.U[i], hp.tau, hp.pi, cg_cfg, v_init=state.V[i])
        new_u[i] = prox_step_matrix(new_v[i], state.W[i] @ v_in_old(i), hp.tau, hp.pi, hp.eps_tiny)
        new_w[i] = _pgm_update(new_u[i], v_in_old(i), state.W[i], hp, pgm_cfg, derive_beta)

    return TrainState(new_w, new_u, new_v)


def _sq_diff(new, old):
    return sum(float(((a - b) ** 2).sum()) for a, b in zip(new, old))


def _record(k, state, data, hp, dw, dv, seconds):
    f, terms = objective_f(state, data, hp)
    return BcdRecord(k, f, terms["loss"], terms["l20"], terms["frob"], terms["upen"], terms["vpen"], dw, dv, seconds)


def _count_tied_output_columns(state, data):
    h = len(state.W)
    b = state.W[h - 1] @ (state.V[h - 2] if h > 1 else data.X)
    return int(((b == b.max(axis=0, keepdims=True)).sum(axis=0) > 1).sum())


def _epoch_over_batches(state, data, hp, pgm_cfg, cg_cfg, derive_beta, batch_size, perm):
    """Stateless mini-batch pass: W persists, batch U/V start from a forward pass."""
    w = state.W
    n = data.X.shape[1]
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        batch = Dataset(np.ascontiguousarray(data.X[:, idx]), np.ascontiguousarray(data.Y[:, idx]))
        u, v = forward_blocks(w, batch.X)
        batch_state = TrainState(list(w), u, v)
        batch_state = bcd_iteration(batch_state, batch, hp, pgm_cfg, cg_cfg, derive_beta)
        w = batch_state.W
    u, v = forward_blocks(w, data.X)
    return TrainState(w, u, v)


def train(data, shape, hp, rng, pgm_cfg=None, cg_cfg=None, init_scale=0.01,
          derive_beta=False, early_stop_tol=None, batch_size=None,
          warmup_epochs=0, warmup_batch=256, shuffle_rng=None):
    """Initialize and run K outer iterations; returns ``(state, report)``.

    Full-batch by default.  With ``batch_size`` set, each outer iteration
    is one epoch over seeded-shuffled batches with the weight blocks
    carried across batches and the U/V blocks re-derived per batch by a
    forward pass (the report rows are then computed on the re-derived
    full-data state, so the coupling penalties read zero by construction).
    ``warmup_epochs`` runs that mini-batch scheme with ``warmup_batch`` for
    the first iterations regardless of mode; default off.
    """
    if shape.dims[0] != data.X.shape[0]:
        raise ValueError(f"architecture input width {shape.dims[0]} != data dim {data.X.shape[0]}")
    if shape.dims[-1] != data.Y.shape[0]:
        raise ValueError(f"architecture output width {shape.dims[-1]} != label dim {data.Y.shape[0]}")
    if pgm_cfg is None:
        pgm_cfg = PgmConfig(L=hp.L, beta=hp.beta)
    if (batch_size is not None or warmup_epochs > 0) and shuffle_rng is None:
        shuffle_rng = rng.spawn(1)[0]

    state = init_gaussian(shape, init_scale, rng, data.X)
    state.check_consistent(shape, data.X.shape[1])
    records = [_record(0, state, data, hp, 0.0, 0.0, 0.0)]

    for k in range(1, hp.K + 1):
        t0 = time.perf_counter()
        bs = warmup_batch if k <= warmup_epochs else batch_size
        if bs is not None:
            perm = shuffle_rng.permutation(data.X.shape[1])
            new_state = _epoch_over_batches(state, data, hp, pgm_cfg, cg_cfg, derive_beta, int(bs), perm)
        else:
            new_state = bcd_iteration(state, data, hp, pgm_cfg, cg_cfg, derive_beta)
        dw = _sq_diff(new_state.W, state.W)
        dv = _sq_diff(new_state.V, state.V)
        state = new_state
        state.check_finite()
        records.append(_record(k, state, data, hp, dw, dv, time.perf_counter() - t0))
        logger.debug("iteration %d: F=%.6g dW=%.3g dV=%.3g", k, records[-1].f, dw, dv)
        if early_stop_tol is not None and abs(records[-1].f - records[-2].f) < early_stop_tol:
            logger.info("early stop at iteration %d: |dF| < %g", k, early_stop_tol)
            break

    tied = _count_tied_output_columns(state, data)
    if tied:
        logger.warning("%d output columns have tied maxima at the final iterate", tied)
    return state, BcdReport(records)


def check_descent(report, hp, tol=1e-9):
    """Check the per-iteration descent inequality

        F(k+1) - F(k) <= -((gamma - 1/beta)/2) * dW - (pi/2) * dV + tol.

    Returns ``(ok, worst_violation)``.  The bound is only guaranteed when
    gamma >= 1/beta and the weight sub-problems are solved to their fixed
    points, so this is a diagnostic, never an assertion; callers in the
    theory-compliant regime may assert on ``ok``.
    """
    if not report.records:
        raise ValueError("empty report")
    coeff = 0.5 * (hp.gamma - 1.0 / hp.beta)
    worst = -np.inf
    for prev, cur in zip(report.records, report.records[1:]):
        bound = -coeff * cur.dw - 0.5 * hp.pi * cur.dv
        worst = max(worst, (cur.f - prev.f) - bound)
    if worst == -np.inf:
        worst = 0.0
    return bool(worst <= tol), float(worst)
