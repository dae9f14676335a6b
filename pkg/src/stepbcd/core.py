"""Shared containers and primitives: shapes, state, hyperparameters, RNG.

Matrices are plain 2-D float64 numpy arrays (row-major).  64-bit floats are
required throughout: the thresholding solvers sit on knife-edge equalities
that 32-bit arithmetic would resolve differently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prox import step

__all__ = [
    "STAGE_INIT",
    "STAGE_NOISE",
    "STAGE_SHUFFLE",
    "STAGE_POWER",
    "make_rng",
    "matmul",
    "NetworkShape",
    "Hyperparams",
    "TrainState",
    "forward_blocks",
    "init_gaussian",
]

# Stage codes for derived random streams.  Each randomized stage draws from
# its own stream keyed by (seed, stage, ...), so toggling one stage never
# shifts another stage's draws.
STAGE_INIT = 0
STAGE_NOISE = 1
STAGE_SHUFFLE = 2
STAGE_POWER = 3


def make_rng(seed, *path):
    """Seeded generator for the stream keyed by ``(seed, *path)``.

    Identical keys give identical streams across runs and processes.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


def matmul(a, b):
    """Matrix product with an explicit conformability check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths ``(d_0, ..., d_h)`` of a fully-connected network.

    ``h = len(dims) - 1`` is the number of weight layers; weight i maps
    layer i to layer i+1 and has shape ``(dims[i+1], dims[i])``.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2:
            raise ValueError(f"need at least input and output widths, got {self.dims}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"all widths must be >= 1, got {self.dims}")

    @property
    def h(self):
        return len(self.dims) - 1

    def weight_shape(self, i):
        return (self.dims[i + 1], self.dims[i])


@dataclass(frozen=True)
class Hyperparams:
    """Penalty, regularization, and step-size constants.

    Defaults are the reference experimental values: tau/pi weight the two
    coupling penalties, gamma the Frobenius term, lam the group-sparsity
    term, beta the proximal step, L the inner proximal-gradient iterations,
    K the outer iterations.  ``eps_tiny`` is the numeric surrogate for the
    one-sided limits in the closed-form solvers.
    """

    tau: float = 1e-6
    pi: float = 1e-7
    gamma: float = 1e-8
    lam: float = 0.052
    beta: float = 0.00072
    L: int = 1
    K: int = 35
    eps_tiny: float = 1e-10

    def __post_init__(self):
        for name in ("tau", "pi", "gamma", "beta", "eps_tiny"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.L < 0 or self.K < 0:
            raise ValueError(f"L and K must be nonnegative, got L={self.L} K={self.K}")


@dataclass
class TrainState:
    """The three matrix blocks the outer loop updates.

    ``W[i]`` is ``dims[i+1] x dims[i]``; ``U[i]`` is ``dims[i+1] x N``;
    ``V[i]`` is the post-activation state of hidden layer i+1
    (``dims[i+1] x N``, one fewer entry than U since the input matrix is
    held by the dataset).
    """

    W: list[np.ndarray]
    U: list[np.ndarray]
    V: list[np.ndarray]

    def copy(self):
        return TrainState([w.copy() for w in self.W], [u.copy() for u in self.U], [v.copy() for v in self.V])

    def check_consistent(self, shape, n_samples):
        h = shape.h
        if len(self.W) != h or len(self.U) != h or len(self.V) != h - 1:
            raise ValueError(
                f"block counts {len(self.W)}/{len(self.U)}/{len(self.V)} inconsistent with h={h}"
            )
        for i in range(h):
            if self.W[i].shape != shape.weight_shape(i):
                raise ValueError(f"W[{i}] has shape {self.W[i].shape}, expected {shape.weight_shape(i)}")
            if self.U[i].shape != (shape.dims[i + 1], n_samples):
                raise ValueError(
                    f"U[{i}] has shape {self.U[i].shape}, expected {(shape.dims[i + 1], n_samples)}"
                )
        for i in range(h - 1):
            if self.V[i].shape != (shape.dims[i + 1], n_samples):
                raise ValueError(
                    f"V[{i}] has shape {self.V[i].shape}, expected {(shape.dims[i + 1], n_samples)}"
                )

    def check_finite(self):
        for name, blocks in (("W", self.W), ("U", self.U), ("V", self.V)):
            for i, m in enumerate(blocks):
                if not np.all(np.isfinite(m)):
                    raise FloatingPointError(f"{name}[{i}] contains non-finite entries")


def forward_blocks(w_list, x):
    """Pre- and post-activation blocks of a 0/1 forward pass from ``x``.

    Returns ``(U, V)`` with ``U_i = W_i V_(i-1)`` and ``V_i = step(U_i)``,
    a feasible point for the coupling constraints.
    """
    u_list, v_list = [], []
    v = x
    for i, w in enumerate(w_list):
        u = w @ v
        u_list.append(u)
        if i < len(w_list) - 1:
            v = step(u)
            v_list.append(v)
    return u_list, v_list


def init_gaussian(shape, scale, rng, x):
    """Gaussian weight init plus a 0/1 forward pass for the U/V blocks.

    Weights are i.i.d. ``Normal(0, scale^2)``.  The forward-pass start
    makes both coupling penalties exactly zero initially.
    """
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != shape.dims[0]:
        raise ValueError(f"input matrix {x.shape} does not match d0={shape.dims[0]}")

    w_list = [rng.normal(0.0, scale, size=shape.weight_shape(i)) for i in range(shape.h)]
    u_list, v_list = forward_blocks(w_list, x)
    return TrainState(w_list, u_list, v_list)
