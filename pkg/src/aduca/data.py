"""LibSVM ingestion and construction of the rescaled SVM saddle problem."""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .blocks import BlockPartition, DiagonalScaling, UsageError
from .problems import SvmSaddle

GZIP_MAGIC = b"\x1f\x8b"
# one-hot attribute group sizes of an adult-census style dataset: 14 groups, 123 features
A9A_GROUPS = (5, 7, 5, 16, 5, 7, 14, 6, 5, 2, 2, 2, 3, 44)


class ParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class SparseDataset:
    """``A`` holds one sample per row (n x d, 0-based columns); labels are +-1."""

    A: sparse.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.A.shape[0] != self.labels.shape[0]:
            raise UsageError("sample count and label count differ")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise UsageError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def signed_columns(self) -> sparse.csr_matrix:
        """Abar = [b_1 A_1, ..., b_n A_n], a d x n matrix."""
        return sparse.csr_matrix(sparse.diags(self.labels) @ self.A).T.tocsr()


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        raw = open(source, "rb")
        head = raw.read(2)
        raw.seek(0)
        stream = gzip.open(raw) if head == GZIP_MAGIC else raw
        return io.TextIOWrapper(stream, encoding="utf-8"), True
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)):
        return io.TextIOWrapper(source, encoding="utf-8"), False
    return source, False


def _label(tok: str, lineno: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(lineno, f"label {tok!r} is not numeric") from None
    if val in (1.0, -1.0):
        return val
    if val == 0.0:
        return -1.0
    raise ParseError(lineno, f"label {tok!r} is not one of -1, +1, 0, 1")


def parse_libsvm(source, d: int | None = None) -> SparseDataset:
    """Read ``label idx:val ...`` lines with 1-based, strictly increasing indices.

    ``source`` is a path (plain or gzip), a text stream or a binary stream.
    ``d`` overrides the feature count, which otherwise is the largest index seen.
    """
    fh, owned = _open_text(source)
    labels: list[float] = []
    indptr = [0]
    cols: list[int] = []
    vals: list[float] = []
    try:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            toks = body.split()
            labels.append(_label(toks[0], lineno))
            prev = 0
            for tok in toks[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(lineno, f"malformed token {tok!r}")
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise ParseError(lineno, f"index {idx_s!r} is not an integer") from None
                try:
                    val = float(val_s)
                except ValueError:
                    raise ParseError(lineno, f"value {val_s!r} is not numeric") from None
                if idx < 1:
                    raise ParseError(lineno, f"index {idx} is not positive")
                if idx <= prev:
                    raise ParseError(lineno, "indices must be strictly increasing")
                prev = idx
                cols.append(idx - 1)
                vals.append(val)
            indptr.append(len(cols))
    finally:
        if owned:
            fh.close()
    seen = max(cols) + 1 if cols else 0
    if d is None:
        d = seen
    elif d < seen:
        raise UsageError(f"feature count {d} is below the largest index {seen}")
    A = sparse.csr_matrix((np.array(vals, dtype=np.float64), np.array(cols, dtype=np.int64),
                           np.array(indptr, dtype=np.int64)), shape=(len(labels), d))
    return SparseDataset(A, np.array(labels, dtype=np.float64))


def write_libsvm(ds: SparseDataset, stream) -> None:
    A = ds.A.tocsr()
    for r in range(ds.n):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        feats = " ".join(f"{c + 1}:{float(v)!r}" for c, v in zip(A.indices[lo:hi], A.data[lo:hi]))
        label = "+1" if ds.labels[r] > 0 else "-1"
        stream.write(f"{label} {feats}".rstrip() + "\n")


def compute_scaling(Abar, partition: BlockPartition | None = None) -> DiagonalScaling:
    """Reciprocal row norms for x and reciprocal column norms for y; 1 where a norm is zero."""
    Abar = sparse.csr_matrix(Abar, dtype=np.float64)
    d, n = Abar.shape
    sq = Abar.multiply(Abar)
    row = np.sqrt(np.asarray(sq.sum(axis=1)).ravel())
    col = np.sqrt(np.asarray(sq.sum(axis=0)).ravel())
    lam_x = np.ones(d)
    lam_y = np.ones(n)
    lam_x[row > 0] = 1.0 / row[row > 0]
    lam_y[col > 0] = 1.0 / col[col > 0]
    partition = partition or BlockPartition((d, n))
    return DiagonalScaling(np.concatenate((lam_x, lam_y)), partition)


def build_svm_problem(ds: SparseDataset, lam1: float = 1e-4, lam2: float = 1e-4, x_blocks: int = 1,
                      y_blocks: int = 1, use_scaling: bool = True) -> SvmSaddle:
    if ds.n == 0 or ds.d == 0:
        raise UsageError("empty dataset")
    if not (1 <= x_blocks <= ds.d and 1 <= y_blocks <= ds.n):
        raise UsageError(f"block counts ({x_blocks}, {y_blocks}) exceed dimensions ({ds.d}, {ds.n})")
    Abar = ds.signed_columns()
    diag = compute_scaling(Abar).diag if use_scaling else None
    return SvmSaddle(Abar, lam1, lam2, x_blocks, y_blocks, diag)


def subsample(ds: SparseDataset, n_target: int, seed: int) -> SparseDataset:
    """Uniform sample without replacement, kept in original order."""
    if n_target < 1:
        raise UsageError("subsample must keep at least one sample")
    if n_target > ds.n:
        raise UsageError(f"cannot draw {n_target} samples from {ds.n}")
    if n_target == ds.n:
        return ds
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(ds.n, size=n_target, replace=False))
    return SparseDataset(ds.A[idx], ds.labels[idx])


def make_a9a_like(n: int, seed: int, noise: float = 0.6) -> SparseDataset:
    """Seeded stand-in with a9a's shape: 123 binary one-hot features, 14 active per row.

    Each attribute group draws a category from skewed probabilities; labels
    come from a noisy linear score thresholded to about 24% positives.
    """
    rng = np.random.default_rng(seed)
    offsets = np.concatenate(([0], np.cumsum(A9A_GROUPS)))
    d = int(offsets[-1])
    cols = np.empty((n, len(A9A_GROUPS)), dtype=np.int64)
    for g, size in enumerate(A9A_GROUPS):
        probs = rng.dirichlet(np.full(size, 0.7))
        cols[:, g] = offsets[g] + rng.choice(size, size=n, p=probs)
    indptr = np.arange(0, n * len(A9A_GROUPS) + 1, len(A9A_GROUPS), dtype=np.int64)
    A = sparse.csr_matrix((np.ones(cols.size), cols.ravel(), indptr), shape=(n, d))
    w = rng.standard_normal(d)
    score = A @ w
    score = (score - score.mean()) / score.std()
    score += noise * rng.standard_normal(n)
    labels = np.where(score > np.quantile(score, 0.76), 1.0, -1.0)
    return SparseDataset(A, labels)


def load_dataset(spec: str | Path, d: int | None = None) -> SparseDataset:
    """A LibSVM path, or ``synthetic:a9a:<n>:<seed>`` for the seeded stand-in."""
    spec = str(spec)
    if spec.startswith("synthetic:a9a"):
        parts = spec.split(":")
        n = int(parts[2]) if len(parts) > 2 else 32561
        seed = int(parts[3]) if len(parts) > 3 else 0
        return make_a9a_like(n, seed)
    return parse_libsvm(spec, d)
