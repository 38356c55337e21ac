"""Adaptive delayed-update cyclic solver with backtracking initialization.

One cycle ``k`` costs two full operator passes: ``F(u_k)`` at the start of
the cycle and the ``m`` spliced block evaluations that produce the delayed
operator for the next cycle. Everything a block needs inside a cycle is a
cycle-start snapshot, so the block loop can run on a thread pool and still
reproduce the sequential iterates bit for bit.

Block indices are 0-based. Histories below index 0 follow the conventions
``a_{-1} = a_0``, ``omega_i = 1`` for ``i <= 0`` and ``Lhat_i = 0`` for ``i <= 0``.
"""

from __future__ import annotations

import decimal
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .blocks import UsageError, inverse_scaled_norm, scaled_norm
from .metrics import RunTrace, TraceRecord
from .problems import LinearVI, NumericError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RULES = ("complete", "simplified_known_mu", "simplified_unknown_mu", "fully_specified")
# rounded growth factor and curvature constants for beta=0.8, gamma=0.2, rho=1.2
FIXED_RULE = (1.15, 0.093, 0.079)
MAX_HALVINGS = 200


class ConfigError(ValueError):
    """Solver hyperparameters outside their admissible ranges."""


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 0.8
    gamma: float = 0.2
    rho: float = 1.2
    mu: float = 0.0
    rule: str = "fully_specified"
    max_cycles: int = 1000
    halving: float = 2.0
    step_cap: float = 1e6
    parallel: bool = False
    workers: int | None = None

    def __post_init__(self):
        b, g, r = self.beta, self.gamma, self.rho
        if not GOLDEN < b < 1.0:
            raise ConfigError(f"beta={b} must lie in ((sqrt(5)-1)/2, 1) = ({GOLDEN:.6f}, 1)")
        g_hi = 1.0 - 1.0 / (b * (1.0 + b))
        if not 0.0 < g < g_hi:
            raise ConfigError(f"gamma={g} must lie in (0, 1 - 1/(beta(1+beta))) = (0, {g_hi:.6g})")
        if not 1.0 < r < 1.0 / b:
            raise ConfigError(f"rho={r} must lie in (1, 1/beta) = (1, {1.0 / b:.6g})")
        if not self.mu >= 0.0:
            raise ConfigError(f"mu={self.mu} must be nonnegative")
        if self.rule not in RULES:
            raise ConfigError(f"rule={self.rule!r} must be one of {RULES}")
        if self.max_cycles < 1:
            raise ConfigError("max_cycles must be at least 1")
        if not self.halving > 1.0:
            raise ConfigError(f"halving={self.halving} must exceed 1")
        if not self.step_cap > 0.0:
            raise ConfigError(f"step_cap={self.step_cap} must be positive")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be positive")

    def snapshot(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DerivedConstants:
    rho0: float
    tau: float
    eta: float
    C: float
    Chat: float


def derive_constants(cfg: SolverConfig) -> DerivedConstants:
    """Closed-form constants, evaluated in 50-digit decimal arithmetic and rounded once.

    Parameters enter through their shortest decimal form, so beta = 0.8 means
    exactly 8/10 and the results are the doubles nearest the exact values
    (for instance rho0 is the double nearest 1.152 at the default parameters).
    """
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        b, g, r = (decimal.Decimal(repr(float(x))) for x in (cfg.beta, cfg.gamma, cfg.rho))
        one, two, three = decimal.Decimal(1), decimal.Decimal(2), decimal.Decimal(3)
        rho0 = min(r, b * (one + b) * (one - g))
        rb = r * b
        tau = three * rho0**2 * (one + rb) / (two * rb**2 + three * rho0**2 * (one + rb))
        eta = (g * (one + b) / (one + b * b)).sqrt()
        C = (eta * r / two) * (tau * b / (three * (one + rb))).sqrt()
        Chat = (eta / two) * ((one - tau) * r / two).sqrt()
        consts = DerivedConstants(*(float(x) for x in (rho0, tau, eta, C, Chat)))
    rho0, C, Chat = consts.rho0, consts.C, consts.Chat
    if cfg.rule == "fully_specified":
        growth, c, chat = FIXED_RULE
        if growth > rho0 or c > C or chat > Chat:
            raise ConfigError(
                f"fixed constants {FIXED_RULE} exceed the derived ones "
                f"({rho0:.6g}, {C:.6g}, {Chat:.6g}) for this beta/gamma/rho"
            )
    return consts


def lip_ratio(num: float, den: float) -> float:
    """num/den with x/0 = inf for x > 0 and 0/0 = 0."""
    if den > 0.0:
        return num / den
    return math.inf if num > 0.0 else 0.0


def local_lip_estimates(u_k, u_prev, F_u_k, Ftilde_k, F_u_prev, scaling) -> tuple[float, float]:
    """(L_k, Lhat_k): operator variation over iterate movement in the scaled norms."""
    den = scaled_norm(u_k - u_prev, scaling)
    L = lip_ratio(inverse_scaled_norm(F_u_k - F_u_prev, scaling), den)
    Lhat = lip_ratio(inverse_scaled_norm(F_u_k - Ftilde_k, scaling), den)
    return L, Lhat


def _over(c: float, L: float) -> float:
    return math.inf if L == 0.0 else c / L


@dataclass
class CycleState:
    """Solver memory at the start of cycle ``k``.

    ``a``, ``omega`` and ``Lhat`` are full histories indexed by cycle; the
    accessors apply the below-zero conventions.
    """

    k: int
    u: np.ndarray
    u_prev: np.ndarray
    v_prev: np.ndarray
    F_prev: np.ndarray
    Ftilde: np.ndarray
    Ftilde_prev: np.ndarray
    a: list = field(default_factory=list)
    omega: list = field(default_factory=lambda: [1.0])
    L: list = field(default_factory=lambda: [0.0])
    Lhat: list = field(default_factory=lambda: [0.0])
    theta: float = 1.0
    acc: np.ndarray | None = None
    wsum: float = 0.0

    def a_at(self, i: int) -> float:
        return self.a[max(i, 0)]

    def omega_at(self, i: int) -> float:
        return 1.0 if i < 0 else self.omega[i]

    def Lhat_at(self, i: int) -> float:
        return 0.0 if i <= 0 else self.Lhat[i]

    def phi_at(self, i: int, beta: float, mu: float) -> float:
        a_i, a_im1 = self.a_at(i), self.a_at(i - 1)
        return math.sqrt(a_i * (beta * mu * a_im1 + 1.0) / (beta * a_im1))


def step_size(rule: str, state: CycleState, consts: DerivedConstants, cfg: SolverConfig,
              L_k: float, Lhat_k: float) -> tuple[float, bool]:
    """Largest a_k the rule allows at cycle ``state.k``, capped at ``cfg.step_cap``.

    Returns the step and whether the curvature branch (not the growth cap) was active.
    """
    k = state.k
    b, mu = cfg.beta, cfg.mu
    a1, a2 = state.a_at(k - 1), state.a_at(k - 2)
    if rule == "fully_specified":
        growth_f, c, chat = FIXED_RULE
        growth = growth_f * a1
        curv = min(_over(c, L_k), _over(chat, Lhat_k)) * math.sqrt(a1 / a2)
    elif rule == "simplified_unknown_mu":
        growth = consts.rho0 * a1
        curv = min(_over(consts.C, L_k), _over(consts.Chat, Lhat_k)) * math.sqrt(a1 / a2)
    elif rule == "simplified_known_mu":
        w1 = state.omega_at(k - 1)
        growth = consts.rho0 * a1
        t1 = _over(math.sqrt(consts.tau) * w1 / (math.sqrt(3.0) * math.sqrt(1.0 + w1)), L_k)
        t2 = _over(math.sqrt((1.0 - consts.tau) * w1) / math.sqrt(2.0), Lhat_k)
        curv = consts.eta / 2.0 * min(t1, t2) * state.phi_at(k - 1, b, mu)
    elif rule == "complete":
        g = cfg.gamma
        w1 = state.omega_at(k - 1)
        bracket = 1.0 - (1.0 - g) * b * b * mu * a1
        growth = min(cfg.rho * a1,
                     b * (1.0 + b) * (1.0 - g) * a1 / bracket if bracket > 0.0 else math.inf)
        sq_tau = math.sqrt(consts.tau)
        t1 = _over(sq_tau * w1 / (math.sqrt(3.0) * math.sqrt(1.0 + w1)), L_k)
        t2 = _over(math.sqrt((1.0 - consts.tau) * w1 / 2.0), Lhat_k)
        bounds = [consts.eta / 2.0 * min(t1, t2) * state.phi_at(k - 1, b, mu)]
        lead = consts.eta * sq_tau / (2.0 * math.sqrt(3.0))
        if k >= 2:
            w2 = state.omega_at(k - 2)
            num = lead * w1 * math.sqrt(w2) / math.sqrt(1.0 + w1) * state.phi_at(k - 2, b, mu)
            bounds.append(_over(num, state.Lhat_at(k - 1)))
        if k >= 3:
            w2, w3 = state.omega_at(k - 2), state.omega_at(k - 3)
            num = (lead * w1 / math.sqrt(1.0 + w1) * math.sqrt(w3 / w2) * (a1 / a2)
                   * state.phi_at(k - 3, b, mu))
            bounds.append(_over(num, state.Lhat_at(k - 2)))
        curv = min(bounds)
    else:
        raise ConfigError(f"unknown rule {rule!r}")
    a_k = min(growth, curv, cfg.step_cap)
    if not a_k > 0.0:
        raise NumericError(f"step size collapsed to {a_k} at cycle {k}")
    return a_k, curv < growth


def extrapolated_operator(Ftilde_k, F_prev, Ftilde_prev, a_prev: float, omega_prev: float,
                          a_k: float) -> np.ndarray:
    """F_tilde_k + (a_{k-1} omega_{k-1} / a_k) (F(u_{k-1}) - F_tilde_{k-1})."""
    return Ftilde_k + (a_prev * omega_prev / a_k) * (F_prev - Ftilde_prev)


def omega_of(cfg: SolverConfig, a_k: float) -> float:
    return (1.0 + cfg.rho * cfg.beta * cfg.mu * a_k) / (1.0 + cfg.mu * a_k)


@dataclass
class InitResult:
    a0: float
    u1: np.ndarray
    Ftilde1: np.ndarray
    F0: np.ndarray
    backtracks: int
    L1: float
    L_probe: float
    Lhat_probe: float
    s_probe: float


def initialize(problem: LinearVI, u0, consts: DerivedConstants, cfg: SolverConfig,
               executor=None) -> InitResult:
    """Probe with a unit step, then halve from min{C/L1, Chat/Lhat1} until a0 <= 1/(sqrt(2) L1)."""
    u0 = np.ascontiguousarray(problem.partition.check_vector(u0, "u0"))
    if not np.all(np.isfinite(u0)):
        raise NumericError("initial point contains non-finite values")
    sc = problem.scaling
    F0 = problem.eval_full(u0)
    u1 = problem.prox_full(u0, F0, 1.0, executor)
    Ft1 = problem.eval_spliced(u1, u0, executor)
    F1 = problem.eval_full(u1)
    den = scaled_norm(u1 - u0, sc)
    L_pr = lip_ratio(inverse_scaled_norm(F1 - F0, sc), den)
    Lhat_pr = lip_ratio(inverse_scaled_norm(F1 - Ft1, sc), den)
    s_pr = min(_over(consts.C, L_pr), _over(consts.Chat, Lhat_pr))
    a_start = min(s_pr, cfg.step_cap)
    i = 0
    while True:
        a0 = a_start * cfg.halving ** (-i)
        u1 = problem.prox_full(u0, F0, a0, executor)
        F1 = problem.eval_full(u1)
        L1 = lip_ratio(inverse_scaled_norm(F1 - F0, sc), scaled_norm(u1 - u0, sc))
        i += 1
        if a0 * math.sqrt(2.0) * L1 <= 1.0:
            break
        if i > MAX_HALVINGS:
            raise NumericError("initial step search did not terminate")
    Ft1 = problem.eval_spliced(u1, u0, executor)
    return InitResult(a0, u1, Ft1, F0, i - 1, L1, L_pr, Lhat_pr, s_pr)


@dataclass(frozen=True)
class StopRule:
    max_cycles: int | None = None
    gap_tol: float | None = None
    max_passes: float | None = None


@dataclass
class SolveResult:
    ergodic: np.ndarray
    v_last: np.ndarray
    last_iterate: np.ndarray
    trace: RunTrace
    backtracks: int = 0
    converged: bool = False
    diverged: bool = False
    cycles: int = 0


# Monitor receives (k, newest iterate, ergodic point, passes) and returns a dict
# with optional "gap" and "primal" entries.
Monitor = Callable[[int, np.ndarray, np.ndarray, float], dict]


def _passes(problem: LinearVI, base: int) -> float:
    return (problem.meter.units - base) / problem.full_cost


def run(problem: LinearVI, u0, cfg: SolverConfig | None = None, stop: StopRule | None = None,
        monitor: Monitor | None = None, metric_every: int = 10, store_iterates: bool = False,
        timing: bool = True) -> SolveResult:
    """Run cycles until one of the stop rule budgets is met."""
    cfg = cfg or SolverConfig()
    stop = stop or StopRule()
    K = stop.max_cycles if stop.max_cycles is not None else cfg.max_cycles
    if K < 1:
        raise UsageError("at least one cycle is required")
    consts = derive_constants(cfg)
    base = problem.meter.units
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=cfg.workers or problem.partition.m) if cfg.parallel else None
    try:
        return _run(problem, u0, cfg, consts, stop, K, monitor, metric_every, store_iterates,
                    timing, base, t0, pool)
    finally:
        if pool is not None:
            pool.shutdown()


def _run(problem, u0, cfg, consts, stop, K, monitor, metric_every, store_iterates, timing,
         base, t0, pool) -> SolveResult:
    init = initialize(problem, u0, consts, cfg, pool)
    u0 = np.ascontiguousarray(problem.partition.check_vector(u0, "u0"))
    trace = RunTrace(solver="aduca", config=cfg.snapshot(),
                     iterates=[] if store_iterates else None)
    trace.init = {"a0": init.a0, "backtracks": init.backtracks, "L1": init.L1,
                  "L_probe": init.L_probe, "Lhat_probe": init.Lhat_probe,
                  "s_probe": init.s_probe, "passes": _passes(problem, base)}
    st = CycleState(k=1, u=init.u1, u_prev=u0, v_prev=u0.copy(), F_prev=init.F0,
                    Ftilde=init.Ftilde1, Ftilde_prev=init.F0, a=[init.a0],
                    acc=np.zeros(problem.partition.d))
    b = cfg.beta
    converged = False
    v_k = st.v_prev
    for k in range(1, K + 1):
        st.k = k
        F_k = problem.eval_full(st.u)
        L_k, Lhat_k = local_lip_estimates(st.u, st.u_prev, F_k, st.Ftilde, st.F_prev, problem.scaling)
        a_k, curv_active = step_size(cfg.rule, st, consts, cfg, L_k, Lhat_k)
        Fbar = extrapolated_operator(st.Ftilde, st.F_prev, st.Ftilde_prev, st.a[k - 1],
                                     st.omega_at(k - 1), a_k)
        v_k = (1.0 - b) * st.u + b * st.v_prev
        u_next = problem.prox_full(v_k, Fbar, a_k, pool)
        Ft_next = problem.eval_spliced(u_next, st.u, pool)
        theta_k = st.theta / st.omega_at(k - 1)
        omega_k = omega_of(cfg, a_k)
        st.acc += (theta_k * a_k) * st.u
        st.wsum += theta_k * a_k
        if store_iterates:
            trace.iterates.append((st.u.copy(), F_k))
        st.a.append(a_k)
        st.omega.append(omega_k)
        st.L.append(L_k)
        st.Lhat.append(Lhat_k)
        st.theta = theta_k
        passes = _passes(problem, base)
        rec = TraceRecord(k=k, a_k=a_k, L_k=L_k, Lhat_k=Lhat_k, omega_k=omega_k, theta_k=theta_k,
                          passes=passes)
        trace.aux.append({"curvature_active": curv_active})
        st.u_prev, st.u = st.u, u_next
        st.v_prev = v_k
        st.F_prev = F_k
        st.Ftilde_prev, st.Ftilde = st.Ftilde, Ft_next
        last = k == K or (stop.max_passes is not None and passes + 2.0 > stop.max_passes + 1e-9)
        if monitor is not None and (k % metric_every == 0 or last):
            vals = monitor(k, u_next, st.acc / st.wsum, passes)
            rec.gap = vals.get("gap")
            rec.primal = vals.get("primal")
            if stop.gap_tol is not None and rec.gap is not None and rec.gap <= stop.gap_tol:
                converged = True
                last = True
        if timing:
            rec.wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(rec)
        if last:
            break
    v_last = (1.0 - b) * st.u + b * v_k
    return SolveResult(ergodic=st.acc / st.wsum, v_last=v_last, last_iterate=st.u, trace=trace,
                       backtracks=init.backtracks, converged=converged, cycles=st.k)


@dataclass
class Violation:
    k: int
    condition: str
    lhs: float
    rhs: float


def check_step_conditions(trace: RunTrace, cfg: SolverConfig, consts: DerivedConstants,
                          mu: float | None = None, slack: float = 1e-12) -> list[Violation]:
    """Re-check every complete-rule inequality on a recorded trace.

    Lipschitz-type conditions are tested multiplied through, ``a_k L <= B``, so
    zero and infinite estimates never enter a division.
    """
    mu = cfg.mu if mu is None else mu
    b, g, r = cfg.beta, cfg.gamma, cfg.rho
    tau, eta = consts.tau, consts.eta
    a0 = trace.init["a0"]
    a = {0: a0}
    om = {0: 1.0}
    Lh = {}
    for rec in trace.records:
        a[rec.k] = rec.a_k
        om[rec.k] = rec.omega_k
        Lh[rec.k] = rec.Lhat_k

    def A(i):
        return a[max(i, 0)]

    def W(i):
        return 1.0 if i < 0 else om[i]

    def LH(i):
        return 0.0 if i <= 0 else Lh[i]

    def PHI(i):
        return math.sqrt(A(i) * (b * mu * A(i - 1) + 1.0) / (b * A(i - 1)))

    out: list[Violation] = []

    def plain(k, name, lhs, rhs):
        if lhs > rhs + slack * a[k]:
            out.append(Violation(k, name, lhs, rhs))

    def lip(k, name, L, B):
        # a_k * L <= B with relative slack; L may be 0 or inf
        if L == 0.0:
            return
        if math.isinf(L) or a[k] * L * (1.0 - slack) > B:
            out.append(Violation(k, name, a[k] * L, B))

    sq3 = math.sqrt(3.0)
    for rec in trace.records:
        k, a_k = rec.k, rec.a_k
        a1, a2 = A(k - 1), A(k - 2)
        w1 = W(k - 1)
        plain(k, "growth", a_k, r * a1)
        bracket = 1.0 - (1.0 - g) * b * b * mu * a1
        if bracket > 0.0:
            # a_k * bracket <= beta(1+beta)(1-gamma) a_{k-1}
            if a_k * bracket > b * (1.0 + b) * (1.0 - g) * a1 + slack * a_k * bracket:
                out.append(Violation(k, "strong-convexity growth", a_k * bracket, b * (1.0 + b) * (1.0 - g) * a1))
        phi1 = PHI(k - 1)
        lip(k, "curvature L", rec.L_k,
            eta / 2.0 * math.sqrt(tau) * w1 / (sq3 * math.sqrt(1.0 + w1)) * phi1)
        lip(k, "curvature Lhat", rec.Lhat_k, eta / 2.0 * math.sqrt((1.0 - tau) * w1 / 2.0) * phi1)
        lead = eta * math.sqrt(tau) / (2.0 * sq3)
        if k >= 2:
            w2 = W(k - 2)
            lip(k, "delayed Lhat(k-1)", LH(k - 1),
                lead * w1 * math.sqrt(w2) / math.sqrt(1.0 + w1) * PHI(k - 2))
        if k >= 3:
            w2, w3 = W(k - 2), W(k - 3)
            lip(k, "delayed Lhat(k-2)", LH(k - 2),
                lead * w1 / math.sqrt(1.0 + w1) * math.sqrt(w3 / w2) * (a1 / a2) * PHI(k - 3))
    return out
