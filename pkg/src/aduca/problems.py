"""Monotone operator problems with block-separable regularizers.

Every instance here has an affine operator ``F(u) = J u + q`` with ``J`` held
in CSR form, plus a coordinatewise regularizer

    g_j(w) = l1_j |w| + (l2_j / 2) w**2 + indicator(lo_j <= w <= hi_j),

which covers the zero, elastic-net, scaled strongly convex and box cases.
Operator evaluations made by solvers go through the ``eval_*`` methods and
are charged to a thread-safe work meter; metrics call :meth:`LinearVI.operator`,
which is not charged.
"""

from __future__ import annotations

import threading
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import kernels
from .blocks import BlockPartition, DiagonalScaling, UsageError

BOX_TOL = 1e-12


class NumericError(FloatingPointError):
    """Non-finite data reached an operator or prox evaluation."""


class MonotonicityError(ValueError):
    """A sampled pair violated monotonicity of the operator."""


class DomainError(ValueError):
    """A point lies outside the domain of the regularizer."""


@dataclass(frozen=True)
class SeparableRegularizer:
    l1: np.ndarray
    l2: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        arrs = [np.array(a, dtype=np.float64) for a in (self.l1, self.l2, self.lo, self.hi)]
        d = arrs[0].shape[0]
        if any(a.shape != (d,) for a in arrs):
            raise UsageError("regularizer parameter arrays must share one length")
        if np.any(arrs[0] < 0) or np.any(arrs[1] < 0):
            raise UsageError("l1 and l2 weights must be nonnegative")
        if np.any(arrs[2] > arrs[3]):
            raise UsageError("box lower bounds exceed upper bounds")
        for name, a in zip(("l1", "l2", "lo", "hi"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls, d: int) -> "SeparableRegularizer":
        return cls(np.zeros(d), np.zeros(d), np.full(d, -np.inf), np.full(d, np.inf))

    @classmethod
    def elastic_net(cls, d: int, l1, l2) -> "SeparableRegularizer":
        return cls(np.broadcast_to(l1, d), np.broadcast_to(l2, d), np.full(d, -np.inf), np.full(d, np.inf))

    @classmethod
    def concat(cls, *parts: "SeparableRegularizer") -> "SeparableRegularizer":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("l1", "l2", "lo", "hi")))

    @property
    def d(self) -> int:
        return self.l1.shape[0]

    def value(self, u: np.ndarray) -> float:
        """g(u), or +inf when u leaves the box by more than a rounding tolerance."""
        tol = BOX_TOL * (1.0 + np.abs(u))
        if np.any(u < self.lo - tol) or np.any(u > self.hi + tol):
            return float("inf")
        return float(np.sum(self.l1 * np.abs(u)) + 0.5 * np.sum(self.l2 * u * u))

    def in_domain(self, u: np.ndarray) -> bool:
        return bool(np.isfinite(self.value(u)))

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lo, self.hi)

    def strong_convexity(self, scaling: DiagonalScaling) -> float:
        """Largest mu with g - (mu/2)||.||_Lambda^2 convex."""
        return float(np.min(self.l2 / scaling.diag))

    def subgradient_residual(self, w, v, lin, a, lam) -> np.ndarray:
        """Distance from 0 to a*lin + a*dg(w) + lam*(w - v), coordinatewise."""
        smooth = a * lin + a * self.l2 * w + lam * (w - v)
        # interval [lo_i, hi_i] for a*l1*d|w| plus the box normal cone
        lo_i = np.where(w == 0.0, -a * self.l1, a * self.l1 * np.sign(w))
        hi_i = np.where(w == 0.0, a * self.l1, a * self.l1 * np.sign(w))
        lo_i = np.where(w <= self.lo, -np.inf, lo_i)
        hi_i = np.where(w >= self.hi, np.inf, hi_i)
        target = -smooth
        return np.maximum(0.0, np.maximum(lo_i - target, target - hi_i))


class WorkMeter:
    """Counts operator work in integer units; one full pass equals ``full_cost`` units."""

    def __init__(self):
        self._lock = threading.Lock()
        self.units = 0

    def charge(self, units: int) -> None:
        with self._lock:
            self.units += units

    def reset(self) -> None:
        with self._lock:
            self.units = 0


class LinearVI:
    """Affine monotone operator ``F(u) = J u + q`` with a separable regularizer."""

    kind = "linear"

    def __init__(self, J, q, reg: SeparableRegularizer, partition: BlockPartition,
                 scaling: DiagonalScaling | None = None, mu: float | None = None,
                 name: str = "linear"):
        J = sparse.csr_matrix(J, dtype=np.float64)
        J.sort_indices()
        d = partition.d
        if J.shape != (d, d):
            raise UsageError(f"operator matrix has shape {J.shape}, partition expects ({d}, {d})")
        q = np.array(q, dtype=np.float64).reshape(-1)
        if q.shape != (d,):
            raise UsageError("offset length does not match the partition")
        if reg.d != d:
            raise UsageError("regularizer length does not match the partition")
        self.partition = partition
        self.scaling = scaling if scaling is not None else DiagonalScaling.identity(partition)
        if self.scaling.partition != partition:
            raise UsageError("scaling was built for a different partition")
        self.reg = reg
        self.J = J
        self.q = q
        self.name = name
        self._indptr = J.indptr.astype(np.int64)
        self._indices = J.indices.astype(np.int64)
        self._data = np.ascontiguousarray(J.data)
        nnz = np.diff(self._indptr)
        self.block_cost = tuple(
            int(nnz[partition.block(i)].sum()) + partition.sizes[i] for i in range(partition.m)
        )
        self.full_cost = sum(self.block_cost)
        self.meter = WorkMeter()
        self.mu = reg.strong_convexity(self.scaling) if mu is None else float(mu)
        self._reg_blocks = [
            tuple(np.ascontiguousarray(getattr(reg, f)[partition.block(i)]) for f in ("l1", "l2", "lo", "hi"))
            for i in range(partition.m)
        ]
        self._lam_blocks = [np.ascontiguousarray(self.scaling.block(i)) for i in range(partition.m)]

    # operator evaluation

    def _rows(self, u_new, u_old, r0, r1, split, out=None):
        if out is None:
            out = np.empty(r1 - r0)
        kernels.csr_rows_spliced(self._indptr, self._indices, self._data, u_new, u_old, r0, r1, split, out)
        out += self.q[r0:r1]
        return out

    def _finite(self, *vs):
        for v in vs:
            if not np.all(np.isfinite(v)):
                raise NumericError("operator input contains non-finite values")

    def operator(self, u) -> np.ndarray:
        """F(u) without charging the work meter (used by metrics)."""
        u = np.ascontiguousarray(self.partition.check_vector(u, "u"))
        self._finite(u)
        return self._rows(u, u, 0, self.partition.d, 0)

    def eval_full(self, u) -> np.ndarray:
        out = self.operator(u)
        self.meter.charge(self.full_cost)
        return out

    def eval_block(self, u, i: int) -> np.ndarray:
        sl = self.partition.block(i)
        u = np.ascontiguousarray(self.partition.check_vector(u, "u"))
        self._finite(u)
        out = self._rows(u, u, sl.start, sl.stop, 0)
        self.meter.charge(self.block_cost[i])
        return out

    def eval_spliced_block(self, u_new, u_old, i: int, out=None) -> np.ndarray:
        """F^i at (u_new blocks < i, u_old blocks >= i) without forming the spliced vector."""
        sl = self.partition.block(i)
        u_new = np.ascontiguousarray(u_new, dtype=np.float64)
        u_old = np.ascontiguousarray(u_old, dtype=np.float64)
        out = self._rows(u_new, u_old, sl.start, sl.stop, sl.start, out)
        self.meter.charge(self.block_cost[i])
        return out

    def eval_spliced(self, u_new, u_old, executor: Executor | None = None) -> np.ndarray:
        """All spliced block values; blocks are independent and merged by index."""
        u_new = np.ascontiguousarray(self.partition.check_vector(u_new, "u_new"))
        u_old = np.ascontiguousarray(self.partition.check_vector(u_old, "u_old"))
        self._finite(u_new, u_old)
        out = np.empty(self.partition.d)
        views = [out[self.partition.block(i)] for i in range(self.partition.m)]
        if executor is None:
            for i in range(self.partition.m):
                self.eval_spliced_block(u_new, u_old, i, views[i])
        else:
            list(executor.map(lambda i: self.eval_spliced_block(u_new, u_old, i, views[i]),
                              range(self.partition.m)))
        return out

    # regularizer

    def prox_block(self, i: int, v_i, lin_i, a: float, out=None) -> np.ndarray:
        """argmin_w a<lin_i, w> + a g^i(w) + 0.5 ||w - v_i||^2_{Lambda_i}."""
        if not a > 0:
            raise UsageError(f"prox step must be positive, got {a}")
        l1, l2, lo, hi = self._reg_blocks[i]
        v_i = np.ascontiguousarray(v_i, dtype=np.float64)
        lin_i = np.ascontiguousarray(lin_i, dtype=np.float64)
        if v_i.shape != l1.shape or lin_i.shape != l1.shape:
            raise UsageError(f"block {i} expects vectors of length {l1.shape[0]}")
        if out is None:
            out = np.empty_like(v_i)
        kernels.prox_coordinatewise(v_i, lin_i, float(a), self._lam_blocks[i], l1, l2, lo, hi, out)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"prox of block {i} produced non-finite values")
        return out

    def prox_full(self, v, lin, a: float, executor: Executor | None = None) -> np.ndarray:
        v = np.ascontiguousarray(v, dtype=np.float64)
        lin = np.ascontiguousarray(lin, dtype=np.float64)
        out = np.empty(self.partition.d)
        blocks = [self.partition.block(i) for i in range(self.partition.m)]

        def one(i):
            sl = blocks[i]
            self.prox_block(i, v[sl], lin[sl], a, out[sl])

        if executor is None:
            for i in range(self.partition.m):
                one(i)
        else:
            list(executor.map(one, range(self.partition.m)))
        return out

    def g_value(self, u) -> float:
        return self.reg.value(self.partition.check_vector(u, "u"))

    def dense_matrix(self) -> np.ndarray:
        return self.J.toarray()

    def rescaled(self, diag) -> "LinearVI":
        """Same problem in another diagonal geometry, charging the same work meter."""
        clone = LinearVI(self.J, self.q, self.reg, self.partition,
                         DiagonalScaling(diag, self.partition), self.mu, self.name)
        clone.meter = self.meter
        return clone

    def with_partition(self, partition: BlockPartition) -> "LinearVI":
        """Same operator and regularizer under a different block split."""
        scaling = DiagonalScaling(self.scaling.diag, partition)
        return LinearVI(self.J, self.q, self.reg, partition, scaling, self.mu, self.name)


class BilinearSaddle(LinearVI):
    """Saddle point of <x, M y> as the skew operator F(x, y) = (M y, -M^T x)."""

    kind = "bilinear"

    def __init__(self, M, x_blocks: int = 1, y_blocks: int = 1, l1: float = 0.0, l2: float = 0.0,
                 scaling: np.ndarray | None = None, partition: BlockPartition | None = None):
        M = sparse.csr_matrix(M, dtype=np.float64)
        dx, dy = M.shape
        J = sparse.bmat([[None, M], [-M.T, None]], format="csr")
        if J.shape != (dx + dy, dx + dy):  # bmat drops empty corners for 0-size blocks
            J = sparse.csr_matrix(J, shape=(dx + dy, dx + dy))
        if partition is None:
            partition = BlockPartition.even(dx, x_blocks).concat(BlockPartition.even(dy, y_blocks))
        diag = np.ones(dx + dy) if scaling is None else np.asarray(scaling, dtype=np.float64)
        sc = DiagonalScaling(diag, partition)
        reg = SeparableRegularizer.elastic_net(dx + dy, l1, np.asarray(l2) * np.ones(dx + dy))
        super().__init__(J, np.zeros(dx + dy), reg, partition, sc, name="bilinear")
        self.M = M
        self.dx, self.dy = dx, dy


class QuadraticVI(LinearVI):
    """F(u) = (S + W) u + q with g = (mu/2)||u||_Lambda^2 + l1 ||u||_1."""

    kind = "quadratic"

    def __init__(self, S, W, q, mu: float = 0.0, l1: float = 0.0, blocks: int | BlockPartition = 1,
                 scaling: np.ndarray | None = None):
        S = np.asarray(S, dtype=np.float64)
        W = np.asarray(W, dtype=np.float64)
        d = S.shape[0]
        if not np.allclose(S, S.T, atol=1e-12) or not np.allclose(W, -W.T, atol=1e-12):
            raise UsageError("S must be symmetric and W skew-symmetric")
        partition = blocks if isinstance(blocks, BlockPartition) else BlockPartition.even(d, blocks)
        diag = np.ones(d) if scaling is None else np.asarray(scaling, dtype=np.float64)
        sc = DiagonalScaling(diag, partition)
        reg = SeparableRegularizer.elastic_net(d, l1, mu * sc.diag)
        super().__init__(S + W, q, reg, partition, sc, name="quadratic")
        self.S, self.W = S, W
        self.sigma = float(np.linalg.eigvalsh(S).min())

    def solution(self) -> np.ndarray:
        """Exact solution by a direct linear solve (valid when l1 is zero)."""
        if np.any(self.reg.l1 > 0):
            raise UsageError("a direct solve needs l1 = 0")
        A = self.dense_matrix() + np.diag(self.reg.l2)
        return np.linalg.solve(A, -self.q)


class SvmSaddle(LinearVI):
    """Elastic-net SVM as a saddle problem over (x, y) with y in [-1, 0]^n.

    ``F(x, y) = (1/n) (Abar y, 1 - Abar^T x)`` where ``Abar`` is d x n with
    signed samples as columns.
    """

    kind = "svm"

    def __init__(self, Abar, lam1: float, lam2: float, x_blocks: int = 1, y_blocks: int = 1,
                 scaling: np.ndarray | None = None):
        Abar = sparse.csr_matrix(Abar, dtype=np.float64)
        d, n = Abar.shape
        if n == 0 or d == 0:
            raise UsageError("empty dataset")
        # CSR rows of J hold Abar (x rows) and Abar^T (y rows): the two stored copies
        J = sparse.bmat([[None, Abar / n], [-Abar.T.tocsr() / n, None]], format="csr")
        partition = BlockPartition.even(d, x_blocks).concat(BlockPartition.even(n, y_blocks))
        diag = np.ones(d + n) if scaling is None else np.asarray(scaling, dtype=np.float64)
        sc = DiagonalScaling(diag, partition)
        reg = SeparableRegularizer.concat(
            SeparableRegularizer.elastic_net(d, lam1, lam2),
            SeparableRegularizer(np.zeros(n), np.zeros(n), np.full(n, -1.0), np.zeros(n)),
        )
        q = np.concatenate((np.zeros(d), np.full(n, 1.0 / n)))
        super().__init__(J, q, reg, partition, sc, name="svm")
        self.Abar = Abar
        self.AbarT = Abar.T.tocsr()
        self.n, self.d_x = n, d
        self.lam1, self.lam2 = float(lam1), float(lam2)
        self.x_blocks, self.y_blocks = x_blocks, y_blocks

    def split(self, u):
        return u[: self.d_x], u[self.d_x:]

    def best_response_y(self, x) -> np.ndarray:
        """Maximizing y at fixed x: -1 where the hinge is active, else 0."""
        margins = 1.0 - self.AbarT @ x
        return np.where(margins > 0, -1.0, 0.0)


@dataclass
class MonotoneReport:
    min_value: float
    min_ratio: float
    samples: int


def check_monotone(problem: LinearVI, samples: int = 100, seed: int = 0) -> MonotoneReport:
    """Sample pairs and confirm <F(u)-F(v), u-v> >= -1e-12 ||u-v||^2."""
    rng = np.random.default_rng(seed)
    d = problem.partition.d
    min_value = np.inf
    min_ratio = np.inf
    for _ in range(samples):
        u = rng.standard_normal(d)
        v = rng.standard_normal(d)
        diff = u - v
        val = float(np.dot(problem.operator(u) - problem.operator(v), diff))
        sq = float(np.dot(diff, diff))
        if val < -1e-12 * sq:
            raise MonotonicityError(f"monotonicity violated: <F(u)-F(v), u-v> = {val:.3e}")
        min_value = min(min_value, val)
        if sq > 0:
            min_ratio = min(min_ratio, val / sq)
    return MonotoneReport(float(min_value), float(min_ratio), samples)
