"""Reference solvers: fixed-step cyclic prox (PCCM) and adaptive golden-ratio (GRAAL).

Both share the trace format of the main solver. PCCM charges one pass per
cycle; GRAAL charges one pass per iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .blocks import UsageError, inverse_scaled_norm, scaled_norm
from .metrics import RunTrace, TraceRecord
from .problems import LinearVI, NumericError
from .solver import Monitor, SolveResult, StopRule, lip_ratio

PSI = (1.0 + math.sqrt(5.0)) / 2.0
BLOWUP = 1e150


@dataclass(frozen=True)
class PccmConfig:
    step: float = 0.1
    max_cycles: int = 1000
    scaled: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise UsageError(f"PCCM step must be positive, got {self.step}")
        if self.max_cycles < 1:
            raise UsageError("max_cycles must be at least 1")


@dataclass(frozen=True)
class GraalConfig:
    lambda0: float = 1.0
    growth: float = (PSI + 1.0) / 2.0
    lambda_max: float = 1e6
    max_cycles: int = 1000
    scaled: bool = True

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.lambda_max > 0):
            raise UsageError("lambda0 and lambda_max must be positive")
        if not self.growth >= 1.0:
            raise UsageError("growth must be at least 1")
        if self.max_cycles < 1:
            raise UsageError("max_cycles must be at least 1")


def _geometry(problem: LinearVI, scaled: bool) -> LinearVI:
    return problem if scaled else problem.rescaled(np.ones(problem.partition.d))


def _last(k, K, stop, passes, per_iter):
    return k == K or (stop.max_passes is not None and passes + per_iter > stop.max_passes + 1e-9)


def pccm_run(problem: LinearVI, u0, cfg: PccmConfig, stop: StopRule | None = None,
             monitor: Monitor | None = None, metric_every: int = 10,
             timing: bool = True) -> SolveResult:
    """Sequential block prox steps, each using the freshest mixed iterate."""
    stop = stop or StopRule()
    K = stop.max_cycles if stop.max_cycles is not None else cfg.max_cycles
    geo = _geometry(problem, cfg.scaled)
    part = geo.partition
    u = np.array(part.check_vector(u0, "u0"), dtype=np.float64)
    base = problem.meter.units
    t0 = time.perf_counter()
    trace = RunTrace(solver="pccm", config=asdict(cfg))
    acc = np.zeros(part.d)
    diverged = converged = False
    k = 0
    for k in range(1, K + 1):
        try:
            for i in range(part.m):
                sl = part.block(i)
                Fi = geo.eval_block(u, i)
                u[sl] = geo.prox_block(i, u[sl], Fi, cfg.step)
        except NumericError:
            diverged = True
        if diverged or not np.all(np.isfinite(u)) or np.abs(u).max() > BLOWUP:
            diverged = True
            break
        acc += u
        passes = (problem.meter.units - base) / problem.full_cost
        rec = TraceRecord(k=k, a_k=cfg.step, passes=passes)
        last = _last(k, K, stop, passes, 1.0)
        if monitor is not None and (k % metric_every == 0 or last):
            vals = monitor(k, u, acc / k, passes)
            rec.gap, rec.primal = vals.get("gap"), vals.get("primal")
            if stop.gap_tol is not None and rec.gap is not None and rec.gap <= stop.gap_tol:
                converged = last = True
        if timing:
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(rec)
        if last:
            break
    n_ok = max(len(trace), 1)
    return SolveResult(ergodic=acc / n_ok, v_last=u.copy(), last_iterate=u, trace=trace,
                       converged=converged, diverged=diverged, cycles=len(trace))


def graal_run(problem: LinearVI, u0, cfg: GraalConfig, stop: StopRule | None = None,
              monitor: Monitor | None = None, metric_every: int = 10,
              timing: bool = True) -> SolveResult:
    """Full-vector adaptive golden-ratio steps.

    ubar_k = ((psi - 1) u_k + ubar_{k-1}) / psi,
    lam_k = min{growth lam_{k-1}, psi/(4 lam_{k-1}) ||du||^2 / ||dF||_*^2, lam_max},
    u_{k+1} = prox_{lam_k g}(ubar_k - lam_k Lambda^{-1} F(u_k)).
    """
    stop = stop or StopRule()
    K = stop.max_cycles if stop.max_cycles is not None else cfg.max_cycles
    geo = _geometry(problem, cfg.scaled)
    sc = geo.scaling
    u = np.ascontiguousarray(geo.partition.check_vector(u0, "u0"), dtype=np.float64)
    ubar = u.copy()
    base = problem.meter.units
    t0 = time.perf_counter()
    trace = RunTrace(solver="graal", config=asdict(cfg))
    acc = np.zeros(geo.partition.d)
    wsum = 0.0
    u_prev = F_prev = None
    lam = cfg.lambda0
    diverged = converged = False
    for k in range(1, K + 1):
        try:
            F = geo.eval_full(u)
            L_est = None
            if u_prev is not None:
                du2 = scaled_norm(u - u_prev, sc) ** 2
                dF2 = inverse_scaled_norm(F - F_prev, sc) ** 2
                curv = math.inf if dF2 == 0.0 else PSI / (4.0 * lam) * du2 / dF2
                lam = min(cfg.growth * lam, curv, cfg.lambda_max)
                L_est = lip_ratio(math.sqrt(dF2), math.sqrt(du2))
            ubar = ((PSI - 1.0) * u + ubar) / PSI
            u_next = geo.prox_full(ubar, F, lam)
        except NumericError:
            diverged = True
            break
        if np.abs(u_next).max() > BLOWUP:
            diverged = True
            break
        acc += lam * u_next
        wsum += lam
        u_prev, F_prev, u = u, F, u_next
        passes = (problem.meter.units - base) / problem.full_cost
        rec = TraceRecord(k=k, a_k=lam, L_k=L_est, passes=passes)
        last = _last(k, K, stop, passes, 1.0)
        if monitor is not None and (k % metric_every == 0 or last):
            vals = monitor(k, u, acc / wsum, passes)
            rec.gap, rec.primal = vals.get("gap"), vals.get("primal")
            if stop.gap_tol is not None and rec.gap is not None and rec.gap <= stop.gap_tol:
                converged = last = True
        if timing:
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(rec)
        if last:
            break
    erg = acc / wsum if wsum > 0 else u.copy()
    return SolveResult(ergodic=erg, v_last=u.copy(), last_iterate=u, trace=trace,
                       converged=converged, diverged=diverged, cycles=len(trace))
