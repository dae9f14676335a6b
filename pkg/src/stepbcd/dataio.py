"""Dataset ingestion (IDX), preprocessing, noise corruption, checkpoints.

IDX headers are big-endian regardless of host byte order.  Checkpoints use
a fixed little-endian layout with a trailing CRC-32 so round trips are
bit-exact and corruption is detected.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .core import Hyperparams, NetworkShape, TrainState

__all__ = [
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "IdxFormatError",
    "CheckpointError",
    "ChecksumError",
    "VersionError",
    "TruncatedCheckpointError",
    "Dataset",
    "load_idx_images",
    "load_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "to_dataset",
    "load_csv_dataset",
    "add_gaussian_noise",
    "save_checkpoint",
    "load_checkpoint",
    "make_synthetic_images",
    "make_cluster_dataset",
]

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

CHECKPOINT_MAGIC = b"01BCDCKP"
CHECKPOINT_VERSION = 1

# Refuse IDX headers whose element count cannot be a real dataset; guards
# against reading garbage headers as multi-terabyte allocations.
_MAX_IDX_ELEMENTS = 1 << 40


class IdxFormatError(ValueError):
    """Malformed IDX file: bad magic, truncation, or absurd dimensions."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its CRC-32."""


class VersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint file is shorter than its declared length."""


@dataclass(frozen=True)
class Dataset:
    """Input matrix (columns are samples) and one-hot label matrix.

    One-hot validity of ``Y`` is checked on construction.  The [0, 1]
    input range is enforced where normalization happens (``to_dataset``,
    CSV import), not here, so noise-corrupted variants with clamping
    disabled remain representable.
    """

    X: np.ndarray
    Y: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be 2-D")
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError(f"sample counts differ: X has {self.X.shape[1]}, Y has {self.Y.shape[1]}")
        _check_one_hot(self.Y)

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def input_dim(self):
        return self.X.shape[0]

    @property
    def num_classes(self):
        return self.Y.shape[0]

    def labels(self):
        return np.argmax(self.Y, axis=0)

    def subset(self, indices):
        return Dataset(np.ascontiguousarray(self.X[:, indices]), np.ascontiguousarray(self.Y[:, indices]), self.names)


def _check_one_hot(y):
    ok = np.all((y == 0.0) | (y == 1.0), axis=0) & (y.sum(axis=0) == 1.0)
    if not np.all(ok):
        raise ValueError(f"label column {int(np.argmax(~ok))} is not one-hot")


def _read_exact(f, nbytes, path, what):
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IdxFormatError(f"{path}: truncated file while reading {what}")
    return data


def load_idx_images(path):
    """Parse an IDX image file into a ``(count, rows, cols)`` uint8 tensor."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, path, "header"))
        if magic != IMAGE_MAGIC:
            hint = " (that is the label magic)" if magic == LABEL_MAGIC else ""
            raise IdxFormatError(f"{path}: expected image magic {IMAGE_MAGIC}, found {magic}{hint}")
        total = count * rows * cols
        if total > _MAX_IDX_ELEMENTS:
            raise IdxFormatError(f"{path}: dimension overflow: {count} x {rows} x {cols}")
        payload = _read_exact(f, total, path, "pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path):
    """Parse an IDX label file into a uint8 vector of class indices."""
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, path, "header"))
        if magic != LABEL_MAGIC:
            hint = " (that is the image magic)" if magic == IMAGE_MAGIC else ""
            raise IdxFormatError(f"{path}: expected label magic {LABEL_MAGIC}, found {magic}{hint}")
        if count > _MAX_IDX_ELEMENTS:
            raise IdxFormatError(f"{path}: dimension overflow: {count} labels")
        payload = _read_exact(f, count, path, "label data")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images):
    """Write a ``(count, rows, cols)`` uint8 tensor in IDX image format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"expected a 3-D image tensor, got shape {images.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    """Write a label vector in IDX label format."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError(f"expected a 1-D label vector, got shape {labels.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def to_dataset(images, labels, num_classes):
    """Flatten, scale to [0, 1], and one-hot encode into a Dataset.

    Columns of X are samples (pixels / 255); Y[c, s] = 1 iff label s is c.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    bad = labels >= num_classes
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"label {int(labels[i])} at index {i} exceeds class count {num_classes}")
    n = images.shape[0]
    x = images.reshape(n, int(np.prod(images.shape[1:]))).T.astype(np.float64) / 255.0
    y = np.zeros((num_classes, n), dtype=np.float64)
    y[labels.astype(np.intp), np.arange(n)] = 1.0
    return Dataset(np.ascontiguousarray(x), y)


def load_csv_dataset(path, num_classes):
    """Read one sample per line, features first, integer label last.

    Features are taken as already normalized and must lie in [0, 1].
    """
    raw = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    features = raw[:, :-1].T
    labels = raw[:, -1].astype(np.intp)
    if np.any(features < 0.0) or np.any(features > 1.0):
        raise ValueError(f"{path}: features outside [0, 1]")
    bad = (labels < 0) | (labels >= num_classes)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"label {int(labels[i])} at line {i + 1} exceeds class count {num_classes}")
    y = np.zeros((num_classes, labels.shape[0]), dtype=np.float64)
    y[labels, np.arange(labels.shape[0])] = 1.0
    return Dataset(np.ascontiguousarray(features), y)


def add_gaussian_noise(data, sigma, rng, clamp=True):
    """Corrupt inputs with i.i.d. Gaussian noise; labels are untouched.

    ``sigma = 0`` returns an exact copy (the draw is still consumed so
    stream alignment does not depend on sigma).  Clamping back to [0, 1]
    is on by default since pixels are intensities.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    x = data.X + rng.normal(0.0, sigma, size=data.X.shape)
    if clamp:
        np.clip(x, 0.0, 1.0, out=x)
    return Dataset(x, data.Y.copy(), data.names)


def _pack_matrix(m):
    m = np.ascontiguousarray(m, dtype=np.float64)
    return struct.pack("<II", m.shape[0], m.shape[1]) + m.astype("<f8", copy=False).tobytes()


def save_checkpoint(state, shape, hp, path):
    """Serialize (state, shape, hyperparams) with a trailing CRC-32.

    Layout: magic, u64 payload length, payload, u32 CRC-32 of the payload.
    Payload: u32 version, u32 h, u32 widths, u32 N, f64 tau/pi/gamma/lam/
    beta, u32 L, u32 K, f64 eps_tiny, then every W, U, V block as
    (u32 rows, u32 cols, row-major little-endian f64).
    """
    n = state.U[0].shape[1] if state.U else 0
    state.check_consistent(shape, n)
    state.check_finite()
    payload = bytearray()
    payload += struct.pack("<II", CHECKPOINT_VERSION, shape.h)
    payload += struct.pack(f"<{len(shape.dims)}I", *shape.dims)
    payload += struct.pack("<I", n)
    payload += struct.pack("<5d", hp.tau, hp.pi, hp.gamma, hp.lam, hp.beta)
    payload += struct.pack("<II", hp.L, hp.K)
    payload += struct.pack("<d", hp.eps_tiny)
    for m in (*state.W, *state.U, *state.V):
        payload += _pack_matrix(m)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


class _Cursor:
    def __init__(self, buf, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise TruncatedCheckpointError(f"{self.path}: payload ends inside a field")
        out = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return out

    def take_matrix(self):
        rows, cols = self.take("<II")
        nbytes = rows * cols * 8
        if self.off + nbytes > len(self.buf):
            raise TruncatedCheckpointError(f"{self.path}: payload ends inside a matrix")
        m = np.frombuffer(self.buf, dtype="<f8", count=rows * cols, offset=self.off).reshape(rows, cols)
        self.off += nbytes
        return m.copy()  # frombuffer views are read-only


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(state, shape, hp)``.

    Bad magic, truncation, checksum failure, and version mismatch raise
    distinct errors.
    """
    with open(path, "rb") as f:
        data = f.read()
    head = len(CHECKPOINT_MAGIC) + 8
    if len(data) < head + 4:
        raise TruncatedCheckpointError(f"{path}: file too short for a checkpoint")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (payload_len,) = struct.unpack_from("<Q", data, len(CHECKPOINT_MAGIC))
    expected = head + payload_len + 4
    if len(data) < expected:
        raise TruncatedCheckpointError(f"{path}: expected {expected} bytes, file has {len(data)}")
    if len(data) > expected:
        raise CheckpointError(f"{path}: {len(data) - expected} bytes of trailing data")
    payload = data[head : head + payload_len]
    (stored_crc,) = struct.unpack_from("<I", data, head + payload_len)
    if zlib.crc32(payload) != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt")

    cur = _Cursor(payload, path)
    (version, h) = cur.take("<II")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    dims = cur.take(f"<{h + 1}I")
    (n,) = cur.take("<I")
    tau, pi, gamma, lam, beta = cur.take("<5d")
    big_l, big_k = cur.take("<II")
    (eps_tiny,) = cur.take("<d")
    shape = NetworkShape(dims)
    hp = Hyperparams(tau=tau, pi=pi, gamma=gamma, lam=lam, beta=beta, L=big_l, K=big_k, eps_tiny=eps_tiny)
    w = [cur.take_matrix() for _ in range(h)]
    u = [cur.take_matrix() for _ in range(h)]
    v = [cur.take_matrix() for _ in range(h - 1)]
    if cur.off != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - cur.off} unexpected payload bytes")
    state = TrainState(w, u, v)
    state.check_consistent(shape, n)
    state.check_finite()
    return state, shape, hp


def make_synthetic_images(n, num_classes, rng, rows=28, cols=28, block=4):
    """Deterministic image-classification surrogate in IDX-compatible form.

    Each class gets a random blocky prototype; samples are the prototype
    plus pixel noise, quantized to uint8.  Returns ``(images, labels)``
    with balanced labels in a seeded shuffled order.
    """
    if rows % block or cols % block:
        raise ValueError(f"block {block} must divide rows {rows} and cols {cols}")
    protos = np.kron(
        rng.integers(0, 2, size=(num_classes, rows // block, cols // block)) * 160.0,
        np.ones((block, block)),
    )
    labels = (np.arange(n) % num_classes).astype(np.uint8)
    rng.shuffle(labels)
    images = protos[labels] + rng.normal(0.0, 32.0, size=(n, rows, cols))
    return np.clip(images, 0.0, 255.0).astype(np.uint8), labels


def make_cluster_dataset(input_dim, num_classes, n, rng, spread=0.05):
    """Small separable dataset: one prototype per class plus jitter, in [0, 1]."""
    protos = rng.random((input_dim, num_classes))
    labels = (np.arange(n) % num_classes).astype(np.intp)
    rng.shuffle(labels)
    x = protos[:, labels] + spread * rng.standard_normal((input_dim, n))
    np.clip(x, 0.0, 1.0, out=x)
    y = np.zeros((num_classes, n), dtype=np.float64)
    y[labels, np.arange(n)] = 1.0
    return Dataset(x, y)
