"""Tensor trains: core chain format, contraction, TT-SVD, orthogonalization, norms.

A tensor train stores an order-d coefficient tensor as a chain of order-3
cores, core i of shape (r_{i-1}, m_i, r_i) with boundary ranks r_0 = r_d = 1.
All operations return new values; cores are marked read-only on construction.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

# densify() guards: hard limits preventing accidental exponential blowup
DENSIFY_MAX_ORDER = 12
DENSIFY_MAX_SIZE = 10_000_000


class ShapeError(ValueError):
    pass


def contract(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Contract the last index of w1 with the first index of w2.

    result[i..., k...] = sum_j w1[i..., j] * w2[j, k...]
    """
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    if w1.shape[-1] != w2.shape[0]:
        raise ShapeError(
            f"contraction mismatch: last dim of w1 is {w1.shape[-1]}, "
            f"first dim of w2 is {w2.shape[0]}"
        )
    return np.tensordot(w1, w2, axes=(-1, 0))


def rank_leq(s, t) -> bool:
    """Componentwise partial order on rank tuples."""
    s, t = tuple(s), tuple(t)
    if len(s) != len(t):
        raise ShapeError(f"rank tuples of different length: {len(s)} vs {len(t)}")
    return all(a <= b for a, b in zip(s, t))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Immutable chain of order-3 cores with matching bond dimensions."""

    cores: tuple

    def __init__(self, cores):
        cores = tuple(_freeze(np.asarray(c)) for c in cores)
        if not cores:
            raise ShapeError("a tensor train needs at least one core")
        for i, c in enumerate(cores):
            if c.ndim != 3:
                raise ShapeError(f"core {i} has order {c.ndim}, expected 3")
            if min(c.shape) < 1:
                raise ShapeError(f"core {i} has empty mode: shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ShapeError("boundary ranks must be 1")
        for i in range(len(cores) - 1):
            if cores[i].shape[2] != cores[i + 1].shape[0]:
                raise ShapeError(
                    f"bond mismatch between cores {i} and {i + 1}: "
                    f"{cores[i].shape[2]} vs {cores[i + 1].shape[0]}"
                )
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        """Interior bond dimensions (r_1, ..., r_{d-1})."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    def scale(self, alpha: float) -> "TensorTrain":
        cores = list(self.cores)
        cores[0] = cores[0] * alpha
        return TensorTrain(cores)


def zero_tt(mode_sizes, ranks=None) -> TensorTrain:
    """All-zero TT with given mode sizes and interior ranks (default all 1)."""
    d = len(mode_sizes)
    if ranks is None:
        ranks = (1,) * (d - 1)
    r = (1,) + tuple(ranks) + (1,)
    return TensorTrain([np.zeros((r[i], mode_sizes[i], r[i + 1])) for i in range(d)])


def random_tt(mode_sizes, ranks, rng, scale=1.0) -> TensorTrain:
    """Gaussian random TT; entries scaled by `scale`."""
    d = len(mode_sizes)
    r = (1,) + tuple(ranks) + (1,)
    return TensorTrain(
        [scale * rng.standard_normal((r[i], mode_sizes[i], r[i + 1])) for i in range(d)]
    )


def densify(tt: TensorTrain) -> np.ndarray:
    """Expand to the dense coefficient tensor. Test oracle only; guarded."""
    if tt.order > DENSIFY_MAX_ORDER:
        raise ShapeError(f"densify limited to order {DENSIFY_MAX_ORDER}, got {tt.order}")
    total = int(np.prod([float(m) for m in tt.mode_sizes]))
    if total > DENSIFY_MAX_SIZE:
        raise ShapeError(f"densify limited to {DENSIFY_MAX_SIZE} entries, got {total}")
    out = tt.cores[0]
    for c in tt.cores[1:]:
        out = contract(out, c)
    return out.reshape(tt.mode_sizes)


def tt_svd(full: np.ndarray, max_ranks=None, tol: float = 0.0) -> TensorTrain:
    """Sequential-SVD decomposition of a dense tensor into TT form.

    Truncates each bond to at most max_ranks[i] and drops trailing singular
    values whose combined energy stays below tol (relative to the input norm).
    """
    full = np.asarray(full, dtype=np.float64)
    if full.ndim < 1:
        raise ShapeError("input must have at least one mode")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    modes = full.shape
    d = full.ndim
    if max_ranks is not None and len(max_ranks) != d - 1:
        raise ShapeError(f"max_ranks must have length {d - 1}")
    norm = np.linalg.norm(full)
    # per-bond absolute truncation budget, split evenly across the d-1 bonds
    budget2 = (tol * norm) ** 2 / max(d - 1, 1)
    cores = []
    cur = full.reshape(1, -1)
    r_prev = 1
    for i in range(d - 1):
        mat = cur.reshape(r_prev * modes[i], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = len(s)
        if tol > 0:
            tail = np.cumsum(s[::-1] ** 2)[::-1]  # tail[j] = sum of s[j:]**2
            keep = int(np.searchsorted(tail[::-1], budget2, side="right"))
            r = max(1, len(s) - keep)
        if max_ranks is not None:
            r = min(r, int(max_ranks[i]))
        r = max(1, r)
        cores.append(u[:, :r].reshape(r_prev, modes[i], r))
        cur = (s[:r, None] * vt[:r]).reshape(r, -1)
        r_prev = r
    cores.append(cur.reshape(r_prev, modes[-1], 1))
    return TensorTrain(cores)


def _push_right(cores, i):
    """Left-orthogonalize core i via thin QR, absorbing the factor into core i+1."""
    rl, m, rr = cores[i].shape
    q, r = np.linalg.qr(cores[i].reshape(rl * m, rr))
    k = q.shape[1]
    cores[i] = q.reshape(rl, m, k)
    cores[i + 1] = np.tensordot(r, cores[i + 1], axes=(1, 0))


def _push_left(cores, i):
    """Right-orthogonalize core i via thin QR, absorbing the factor into core i-1."""
    rl, m, rr = cores[i].shape
    q, r = np.linalg.qr(cores[i].reshape(rl, m * rr).T)
    k = q.shape[1]
    cores[i] = q.T.reshape(k, m, rr)
    cores[i - 1] = np.tensordot(cores[i - 1], r.T, axes=(2, 0))


def orthogonalize(tt: TensorTrain, position: int) -> TensorTrain:
    """Return an equivalent TT, left-orthogonal before and right-orthogonal after
    `position`."""
    d = tt.order
    if not 0 <= position < d:
        raise IndexError(f"position {position} out of range for order {d}")
    cores = [np.array(c) for c in tt.cores]
    for i in range(position):
        _push_right(cores, i)
    for i in range(d - 1, position, -1):
        _push_left(cores, i)
    return TensorTrain(cores)


def frobenius_norm(tt: TensorTrain) -> float:
    """Euclidean norm of the represented coefficient tensor."""
    return float(np.linalg.norm(orthogonalize(tt, 0).cores[0]))


def tt_inner(a: TensorTrain, b: TensorTrain) -> float:
    """Inner product of the represented coefficient tensors."""
    if a.mode_sizes != b.mode_sizes:
        raise ShapeError(f"mode sizes differ: {a.mode_sizes} vs {b.mode_sizes}")
    env = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        env = np.einsum("ab,amc,bmd->cd", env, ca, cb, optimize=True)
    return float(env[0, 0])


def tt_distance(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius distance ||a - b|| without densifying."""
    na2 = tt_inner(a, a)
    nb2 = tt_inner(b, b)
    ab = tt_inner(a, b)
    return float(np.sqrt(max(na2 + nb2 - 2 * ab, 0.0)))


def is_left_orthogonal(core: np.ndarray, tol: float = 1e-12) -> bool:
    rl, m, rr = core.shape
    mat = core.reshape(rl * m, rr)
    return bool(np.max(np.abs(mat.T @ mat - np.eye(rr))) <= tol)


def is_right_orthogonal(core: np.ndarray, tol: float = 1e-12) -> bool:
    rl, m, rr = core.shape
    mat = core.reshape(rl, m * rr)
    return bool(np.max(np.abs(mat @ mat.T - np.eye(rl))) <= tol)


# ---------------------------------------------------------------------------
# Binary serialization: header of little-endian int64 (d, mode sizes, interior
# ranks), then each core's entries as little-endian float64 in row-major order.
# ---------------------------------------------------------------------------

_MAGIC = b"TTPD"


def to_bytes(tt: TensorTrain) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    d = tt.order
    buf.write(struct.pack("<q", d))
    for m in tt.mode_sizes:
        buf.write(struct.pack("<q", m))
    for r in tt.ranks:
        buf.write(struct.pack("<q", r))
    for c in tt.cores:
        buf.write(np.ascontiguousarray(c, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> TensorTrain:
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != _MAGIC:
        raise ValueError("not a serialized tensor train")
    (d,) = struct.unpack("<q", buf.read(8))
    modes = [struct.unpack("<q", buf.read(8))[0] for _ in range(d)]
    ranks = [struct.unpack("<q", buf.read(8))[0] for _ in range(d - 1)]
    r = [1] + ranks + [1]
    cores = []
    for i in range(d):
        n = r[i] * modes[i] * r[i + 1]
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise ValueError("truncated tensor train data")
        cores.append(np.frombuffer(raw, dtype="<f8").reshape(r[i], modes[i], r[i + 1]))
    return TensorTrain(cores)


def save(tt: TensorTrain, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(tt))


def load(path) -> TensorTrain:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
