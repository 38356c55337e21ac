"""Coordinate blocks and the diagonally scaled Euclidean geometry.

A partition is stored as block sizes; block ``i`` (0-based) covers the slice
``offsets[i]:offsets[i + 1]`` of a flat float64 vector. Vectors are plain
numpy arrays validated against the partition at the API boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class UsageError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


@dataclass(frozen=True)
class BlockPartition:
    sizes: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise UsageError("a partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise UsageError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", tuple(np.concatenate(([0], np.cumsum(sizes))).tolist()))

    @classmethod
    def even(cls, d: int, m: int) -> "BlockPartition":
        """Contiguous split of ``d`` coordinates into ``m`` blocks whose sizes differ by at most one."""
        if m < 1 or m > d:
            raise UsageError(f"cannot split {d} coordinates into {m} blocks")
        base, extra = divmod(d, m)
        return cls(tuple(base + 1 if i < extra else base for i in range(m)))

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def d(self) -> int:
        return self.offsets[-1]

    def block(self, i: int) -> slice:
        self.check_index(i)
        return slice(self.offsets[i], self.offsets[i + 1])

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.m:
            raise UsageError(f"block index {i} outside [0, {self.m})")

    def check_vector(self, v, name: str = "vector") -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.d:
            raise UsageError(f"{name} has shape {arr.shape}, partition expects ({self.d},)")
        return arr

    def concat(self, other: "BlockPartition") -> "BlockPartition":
        return BlockPartition(self.sizes + other.sizes)


@dataclass(frozen=True)
class DiagonalScaling:
    diag: np.ndarray
    partition: BlockPartition

    def __post_init__(self):
        diag = np.array(self.diag, dtype=np.float64)
        if diag.ndim != 1 or diag.shape[0] != self.partition.d:
            raise UsageError(f"scaling has {diag.shape} entries, partition expects {self.partition.d}")
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            raise UsageError("scaling entries must be finite and strictly positive")
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    @classmethod
    def identity(cls, partition: BlockPartition) -> "DiagonalScaling":
        return cls(np.ones(partition.d), partition)

    def block(self, i: int) -> np.ndarray:
        return self.diag[self.partition.block(i)]


def _check_pair(v, s: DiagonalScaling) -> np.ndarray:
    return s.partition.check_vector(v)


def _weighted_norm(v: np.ndarray, weights: np.ndarray) -> float:
    # divide by the largest entry first so tiny or huge entries neither underflow nor overflow
    top = float(np.max(np.abs(v))) if v.size else 0.0
    if top == 0.0 or not np.isfinite(top):
        return top
    w = v / top
    return top * float(np.sqrt(np.sum(weights * w * w)))


def scaled_norm(v, s: DiagonalScaling) -> float:
    """sqrt(sum_j diag_j * v_j**2)."""
    return _weighted_norm(_check_pair(v, s), s.diag)


def inverse_scaled_norm(v, s: DiagonalScaling) -> float:
    """sqrt(sum_j v_j**2 / diag_j), the dual norm of :func:`scaled_norm`."""
    return _weighted_norm(_check_pair(v, s), 1.0 / s.diag)


def prefix_splice(u_new, u_old, i: int, partition: BlockPartition) -> np.ndarray:
    """Blocks ``0..i-1`` from ``u_new`` followed by blocks ``i..m-1`` from ``u_old``."""
    partition.check_index(i)
    u_new = partition.check_vector(u_new, "u_new")
    u_old = partition.check_vector(u_old, "u_old")
    cut = partition.offsets[i]
    return np.concatenate((u_new[:cut], u_old[cut:]))


def block_sq_norms(v, s: DiagonalScaling) -> np.ndarray:
    """Per-block squared scaled norms; they sum to ``scaled_norm(v, s)**2``."""
    v = _check_pair(v, s)
    terms = s.diag * v * v
    return np.array([np.sum(terms[s.partition.block(i)]) for i in range(s.partition.m)])


def as_sizes(sizes: Sequence[int] | int, d: int | None = None) -> BlockPartition:
    """Build a partition from explicit sizes or, given an int and ``d``, an even split."""
    if isinstance(sizes, (int, np.integer)):
        if d is None:
            raise UsageError("an even split needs the total dimension")
        return BlockPartition.even(d, int(sizes))
    return BlockPartition(tuple(sizes))
