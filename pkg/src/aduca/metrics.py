"""Progress metrics and run traces, with Lipschitz references for affine operators.

None of the evaluations here are charged to a problem's work meter.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .blocks import DiagonalScaling, UsageError, inverse_scaled_norm
from .problems import DomainError, LinearVI

TRACE_FIELDS = ("k", "a_k", "L_k", "Lhat_k", "omega_k", "theta_k", "passes", "wall_ms", "gap", "primal")


class MeritBoundViolation(AssertionError):
    """The ergodic gap exceeded its merit-function bound."""


@dataclass
class TraceRecord:
    k: int
    a_k: float | None = None
    L_k: float | None = None
    Lhat_k: float | None = None
    omega_k: float | None = None
    theta_k: float | None = None
    passes: float = 0.0
    wall_ms: float | None = None
    gap: float | None = None
    primal: float | None = None


@dataclass
class RunTrace:
    """Per-cycle series of one solver run plus its configuration snapshot."""

    solver: str = ""
    config: dict = field(default_factory=dict)
    records: list[TraceRecord] = field(default_factory=list)
    init: dict = field(default_factory=dict)
    # (u_k, F(u_k)) per cycle, kept only in full-trace mode
    iterates: list | None = None
    aux: list[dict] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.k <= last.k:
                raise UsageError(f"trace cycle index must increase ({last.k} then {rec.k})")
            if rec.passes < last.passes:
                raise UsageError("trace pass count decreased")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_FIELDS:
            raise UsageError(f"unknown trace field {name!r}")
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
                        dtype=np.float64)

    def last_value(self, name: str):
        for r in reversed(self.records):
            val = getattr(r, name)
            if val is not None:
                return val
        return None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def trace_to_csv_text(trace: RunTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for rec in trace.records:
        writer.writerow([_fmt(getattr(rec, f)) for f in TRACE_FIELDS])
    return buf.getvalue()


def emit_csv(trace: RunTrace, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(trace_to_csv_text(trace))
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_csv(path) -> RunTrace:
    """Parse a trace CSV written by :func:`emit_csv`."""
    path = Path(path)
    trace = RunTrace(solver=path.stem)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        missing = [f for f in ("k", "passes") if f not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            vals = dict(zip(header, row))
            try:
                kw = {f: (None if vals.get(f, "") == "" else float(vals[f])) for f in TRACE_FIELDS if f != "k"}
                k = int(vals["k"])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            kw["passes"] = kw["passes"] if kw["passes"] is not None else 0.0
            trace.records.append(TraceRecord(k=k, **kw))
    return trace


# gap-type metrics

def restricted_gap(problem: LinearVI, u_hat, u) -> float:
    """<F(u), u_hat - u> + g(u_hat) - g(u); can be negative at non-solutions."""
    u_hat = problem.partition.check_vector(u_hat, "u_hat")
    u = problem.partition.check_vector(u, "u")
    g_hat, g_u = problem.g_value(u_hat), problem.g_value(u)
    if not (math.isfinite(g_hat) and math.isfinite(g_u)):
        raise DomainError("restricted gap needs both points inside dom(g)")
    return float(np.dot(problem.operator(u), u_hat - u) + g_hat - g_u)


def skew_ball_gap(problem: LinearVI, u_hat, center, radius: float) -> float:
    """Supremum of the restricted gap over the scaled ball around ``center``.

    Needs a skew operator (J^T = -J) and g = 0. Writing u = center + w, the
    quadratic term <J w, w> vanishes and the gap is
    <F(center), u_hat - center> - <w, F(u_hat)>, maximized at
    w = -radius * Lambda^{-1} F(u_hat) / ||F(u_hat)||_{Lambda^{-1}}.
    """
    reg = problem.reg
    if np.any(reg.l1) or np.any(reg.l2) or np.any(np.isfinite(reg.lo)) or np.any(np.isfinite(reg.hi)):
        raise UsageError("the closed-form ball gap needs g = 0")
    if abs(problem.J + problem.J.T).max() > 0:
        raise UsageError("the closed-form ball gap needs a skew operator")
    u_hat = problem.partition.check_vector(u_hat, "u_hat")
    center = problem.partition.check_vector(center, "center")
    base = float(np.dot(problem.operator(center), u_hat - center))
    return base + radius * inverse_scaled_norm(problem.operator(u_hat), problem.scaling)


def merit_bound(trace: RunTrace, problem: LinearVI, u, check: bool = True, tol: float = 1e-10) -> float:
    """sum_k theta_k h_k(u) / sum_k theta_k a_k with h_k(u) = a_k(<F(u_k), u_k - u> + g(u_k) - g(u)).

    With ``check`` the ergodic gap at ``u`` is compared against the bound.
    """
    if not trace.iterates:
        raise UsageError("merit bound needs a trace recorded with stored iterates")
    u = problem.partition.check_vector(u, "u")
    g_u = problem.g_value(u)
    if not math.isfinite(g_u):
        raise DomainError("reference point lies outside dom(g)")
    a = np.array([r.a_k for r in trace.records])
    theta = np.array([r.theta_k for r in trace.records])
    if len(trace.iterates) != len(a):
        raise UsageError("stored iterates do not match the trace length")
    num = 0.0
    den = 0.0
    for (u_k, F_k), a_k, th in zip(trace.iterates, a, theta):
        h = a_k * (float(np.dot(F_k, u_k - u)) + problem.g_value(u_k) - g_u)
        num += th * h
        den += th * a_k
    bound = num / den
    if check:
        gap = restricted_gap(problem, ergodic_from_trace(trace), u)
        if gap > bound + tol:
            raise MeritBoundViolation(f"ergodic gap {gap:.6e} exceeds merit bound {bound:.6e}")
    return bound


def ergodic_from_trace(trace: RunTrace) -> np.ndarray:
    """Recompute sum theta_k a_k u_k / sum theta_k a_k from stored iterates."""
    if not trace.iterates:
        raise UsageError("trace has no stored iterates")
    w = np.array([r.theta_k * r.a_k for r in trace.records])
    U = np.array([it[0] for it in trace.iterates])
    return (w @ U) / w.sum()


def svm_primal(x, data, lam1: float, lam2: float) -> float:
    """(1/n) sum_i max(0, 1 - b_i A_i^T x) + lam1 ||x||_1 + (lam2/2) ||x||^2.

    ``data`` is a dataset with ``A`` (n x d) and ``labels``, or a pair ``(A, b)``.
    """
    if isinstance(data, tuple):
        A, b = data
    else:
        A, b = data.A, data.labels
    x = np.asarray(x, dtype=np.float64)
    if A.shape[1] != x.shape[0]:
        raise UsageError(f"x has {x.shape[0]} entries, data has {A.shape[1]} features")
    margins = np.asarray(b, dtype=np.float64) * (A @ x)
    hinge = np.maximum(0.0, 1.0 - margins)
    return float(hinge.mean() + lam1 * np.abs(x).sum() + 0.5 * lam2 * np.dot(x, x))


# Lipschitz references for linear operators

def power_spectral_norm(B, tol: float = 1e-8, seed: int = 0, max_iter: int = 1_000_000) -> float:
    """Largest singular value of B by power iteration on B^T B."""
    n = B.shape[1]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    Bt = B.T.tocsr() if sparse.issparse(B) else B.T
    for _ in range(max_iter):
        y = Bt @ (B @ x)
        mu = float(np.dot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        if np.linalg.norm(y - mu * x) <= tol * mu:
            return math.sqrt(mu)
        x = y / ny
    raise RuntimeError("power iteration did not converge")


def splice_operator(problem: LinearVI) -> sparse.csr_matrix:
    """Matrix T with F(u_k) - F_tilde_k = T (u_k - u_{k-1}) for an affine operator.

    Row block i keeps the columns of blocks i..m-1 (block upper triangle with
    the diagonal blocks).
    """
    J = problem.J.tocoo()
    offsets = np.asarray(problem.partition.offsets)
    row_block = np.searchsorted(offsets, J.row, side="right") - 1
    keep = J.col >= offsets[row_block]
    return sparse.csr_matrix((J.data[keep], (J.row[keep], J.col[keep])), shape=J.shape)


def lipschitz_reference(problem: LinearVI, scaling: DiagonalScaling | None = None,
                        tol: float = 1e-8, seed: int = 0) -> tuple[float, float]:
    """(L_global, Lhat_global) in the scaled geometry for an affine operator."""
    if not isinstance(problem, LinearVI):
        raise UsageError("Lipschitz references are only supported for affine operators")
    scaling = scaling or problem.scaling
    s = sparse.diags(1.0 / np.sqrt(scaling.diag))
    B = (s @ problem.J @ s).tocsr()
    T = (s @ splice_operator(problem) @ s).tocsr()
    return power_spectral_norm(B, tol, seed), power_spectral_norm(T, tol, seed)


def global_step_floor(constants, L: float, Lhat: float) -> float:
    """min{C/L, Chat/Lhat}, the lower bound on the curvature step factor."""
    a = math.inf if L == 0 else constants.C / L
    b = math.inf if Lhat == 0 else constants.Chat / Lhat
    return min(a, b)


def record_dict(rec: TraceRecord) -> dict:
    return asdict(rec)
