"""Configuration-driven experiment runner.

Config files are YAML mappings::

    name: svm-a9a              # label for the output directory
    seeds: [0]                 # one full experiment per seed
    problem:
      kind: svm                # svm | bilinear | quadratic
      dataset: synthetic:a9a:32561:0
      subsample: 2000
      lam1: 1.0e-4
      lam2: 1.0e-4
      x_blocks: 1
      y_blocks: 1
      scaling: true
    budget: {passes: 3000}     # or {cycles: N}
    metric_every: 10
    tolerance: 1.0e-3
    mu_ablation: [0.0, 1.0e-4, 1.0e-2]
    solvers:
      - {type: aduca}
      - {type: graal, lambda0: [0.1, 1.0, 10.0], scaled: [true, false]}
      - {type: pccm, step: [0.01, 0.1]}

A list-valued solver hyperparameter is a grid; every combination becomes a
separate run; an optional ``label`` renames a solver entry. Each run writes ``<label>.seed<N>.csv``; ``summary.json``
collects final values, passes to tolerance and the reference optimum f*.

Exit status: 0 on success (divergence is reported, not fatal), 1 on config or
I/O errors, 2 on internal assertion failures.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import re
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .baselines import GraalConfig, PccmConfig, graal_run, pccm_run
from .blocks import UsageError, scaled_norm
from .data import ParseError, build_svm_problem, load_dataset, subsample
from .metrics import RunTrace, emit_csv, read_csv, restricted_gap, skew_ball_gap, svm_primal
from .problems import BilinearSaddle, LinearVI, QuadraticVI
from .solver import ConfigError, SolverConfig, StopRule, run

OUT_ENV = "ADUCA_OUT"
DEFAULT_OUT = "aduca-out"
SUMMARY_NAME = "summary.json"

PROBLEM_KEYS = {
    "svm": {"kind", "dataset", "subsample", "lam1", "lam2", "x_blocks", "y_blocks", "scaling", "d"},
    "bilinear": {"kind", "dx", "dy", "x_blocks", "y_blocks"},
    "quadratic": {"kind", "d", "blocks", "mu", "op_norm", "psd_weight"},
}
PROBLEM_DEFAULTS = {
    "svm": {"subsample": None, "lam1": 1e-4, "lam2": 1e-4, "x_blocks": 1, "y_blocks": 1,
            "scaling": True, "d": None},
    "bilinear": {"dx": 20, "dy": 20, "x_blocks": 1, "y_blocks": 1},
    "quadratic": {"d": 20, "blocks": 4, "mu": 0.1, "op_norm": 0.1, "psd_weight": 0.5},
}
SOLVER_KEYS = {
    "aduca": {"beta", "gamma", "rho", "mu", "rule", "step_cap"},
    "pccm": {"step", "scaled"},
    "graal": {"lambda0", "growth", "lambda_max", "scaled"},
}
TOP_KEYS = {"name", "seed", "seeds", "problem", "budget", "metric_every", "tolerance",
            "mu_ablation", "solvers", "output", "workers"}


class ConfigLoadError(ValueError):
    """A config file is unreadable or violates an invariant; ``key`` names the offender."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class RunSpec:
    label: str
    solver: str
    params: dict


@dataclass
class ExperimentConfig:
    name: str
    seeds: list
    problem: dict
    budget: dict
    metric_every: int
    tolerance: float
    mu_ablation: list
    solvers: list
    output: str | None = None
    workers: int = 1
    runs: list = field(default_factory=list)

    def snapshot(self) -> dict:
        """Every field, defaults included, as plain data."""
        return {
            "name": self.name, "seeds": list(self.seeds), "problem": dict(self.problem),
            "budget": dict(self.budget), "metric_every": self.metric_every,
            "tolerance": self.tolerance, "mu_ablation": list(self.mu_ablation),
            "solvers": [dict(s) for s in self.solvers], "output": self.output,
            "workers": self.workers,
            "runs": [{"label": r.label, "solver": r.solver, "params": r.params} for r in self.runs],
        }


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - set(allowed))
    if extra:
        raise ConfigLoadError(f"{where}{extra[0]}", "unknown key")


def _number(raw, key, kind=float, positive=False, nonneg=False):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigLoadError(key, f"expected a number, got {raw!r}")
    val = kind(raw)
    if kind is int and raw != val:
        raise ConfigLoadError(key, f"expected an integer, got {raw!r}")
    if positive and not val > 0:
        raise ConfigLoadError(key, f"must be positive, got {raw!r}")
    if nonneg and not val >= 0:
        raise ConfigLoadError(key, f"must be nonnegative, got {raw!r}")
    return val


def _grid(params: dict) -> list[dict]:
    keys = sorted(params)
    values = [params[k] if isinstance(params[k], list) else [params[k]] for k in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _label(solver: str, params: dict, grid_keys) -> str:
    parts = [solver] + [f"{k}={_tag(params[k])}" for k in sorted(grid_keys)]
    return "__".join(parts)


def _tag(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, "g")
    return str(value)


def _check_solver(solver: str, params: dict, key: str) -> None:
    try:
        if solver == "aduca":
            SolverConfig(**params)
        elif solver == "pccm":
            PccmConfig(**params)
        else:
            GraalConfig(**params)
    except (ConfigError, UsageError, TypeError) as exc:
        raise ConfigLoadError(key, str(exc)) from None


def _expand_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    runs: list[RunSpec] = []
    seen = set()
    for idx, entry in enumerate(cfg.solvers):
        solver = entry["type"]
        name = entry.get("label", solver)
        params = {k: v for k, v in entry.items() if k not in ("type", "label")}
        grid_keys = [k for k, v in params.items() if isinstance(v, list)]
        for point in _grid(params):
            _check_solver(solver, point, f"solvers[{idx}]")
            if solver == "aduca" and cfg.mu_ablation:
                for mu in cfg.mu_ablation:
                    p = dict(point, mu=float(mu))
                    _check_solver(solver, p, "mu_ablation")
                    runs.append(RunSpec(_label(name, p, set(grid_keys) | {"mu"}), solver, p))
            else:
                runs.append(RunSpec(_label(name, point, grid_keys), solver, point))
    for r in runs:
        if r.label in seen:
            raise ConfigLoadError("solvers", f"duplicate run label {r.label!r}")
        seen.add(r.label)
    return runs


def parse_config(raw, source: str = "<config>") -> ExperimentConfig:
    """Validate a mapping already read from YAML."""
    if not isinstance(raw, dict):
        raise ConfigLoadError(source, "top level must be a mapping")
    _unknown(raw, TOP_KEYS, "")
    if "seed" in raw and "seeds" in raw:
        raise ConfigLoadError("seeds", "give either seed or seeds, not both")
    seeds = raw.get("seeds", [raw.get("seed", 0)])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigLoadError("seeds", "must be a nonempty list")
    seeds = [_number(s, "seeds", int, nonneg=True) for s in seeds]

    prob = raw.get("problem")
    if not isinstance(prob, dict) or "kind" not in prob:
        raise ConfigLoadError("problem.kind", "missing")
    kind = prob["kind"]
    if kind not in PROBLEM_KEYS:
        raise ConfigLoadError("problem.kind", f"must be one of {sorted(PROBLEM_KEYS)}, got {kind!r}")
    _unknown(prob, PROBLEM_KEYS[kind], "problem.")
    problem = dict(PROBLEM_DEFAULTS[kind], **prob)
    if kind == "svm":
        if not problem.get("dataset"):
            raise ConfigLoadError("problem.dataset", "required for kind svm")
        for key in ("lam1", "lam2"):
            problem[key] = _number(problem[key], f"problem.{key}", nonneg=True)
        for key in ("x_blocks", "y_blocks"):
            problem[key] = _number(problem[key], f"problem.{key}", int, positive=True)
        if problem["subsample"] is not None:
            problem["subsample"] = _number(problem["subsample"], "problem.subsample", int, positive=True)
        if not isinstance(problem["scaling"], bool):
            raise ConfigLoadError("problem.scaling", "must be true or false")
    else:
        for key in PROBLEM_KEYS[kind] - {"kind", "mu", "op_norm", "psd_weight"}:
            problem[key] = _number(problem[key], f"problem.{key}", int, positive=True)
        if kind == "quadratic":
            problem["mu"] = _number(problem["mu"], "problem.mu", nonneg=True)
            problem["op_norm"] = _number(problem["op_norm"], "problem.op_norm", positive=True)
            problem["psd_weight"] = _number(problem["psd_weight"], "problem.psd_weight", nonneg=True)
            if problem["blocks"] > problem["d"]:
                raise ConfigLoadError("problem.blocks", "exceeds the dimension")

    budget = raw.get("budget", {"passes": 1000})
    if not isinstance(budget, dict) or len(budget) != 1:
        raise ConfigLoadError("budget", "give exactly one of passes or cycles")
    _unknown(budget, {"passes", "cycles"}, "budget.")
    (bkey, bval), = budget.items()
    budget = {bkey: _number(bval, f"budget.{bkey}", int if bkey == "cycles" else float, positive=True)}

    solvers = raw.get("solvers")
    if not isinstance(solvers, list) or not solvers:
        raise ConfigLoadError("solvers", "at least one solver is required")
    clean = []
    for idx, entry in enumerate(solvers):
        if not isinstance(entry, dict) or entry.get("type") not in SOLVER_KEYS:
            raise ConfigLoadError(f"solvers[{idx}].type", f"must be one of {sorted(SOLVER_KEYS)}")
        _unknown(entry, SOLVER_KEYS[entry["type"]] | {"type", "label"}, f"solvers[{idx}].")
        if "label" in entry and not re.fullmatch(r"[A-Za-z0-9_-]+", str(entry["label"])):
            raise ConfigLoadError(f"solvers[{idx}].label", "use letters, digits, '-' or '_'")
        for k, v in entry.items():
            if isinstance(v, list) and not v:
                raise ConfigLoadError(f"solvers[{idx}].{k}", "empty grid")
        clean.append(dict(entry))

    mu_ablation = raw.get("mu_ablation", [])
    if not isinstance(mu_ablation, list):
        raise ConfigLoadError("mu_ablation", "must be a list")
    mu_ablation = [_number(m, "mu_ablation", nonneg=True) for m in mu_ablation]

    workers = _number(raw.get("workers", 1), "workers", int, positive=True)
    cfg = ExperimentConfig(
        name=str(raw.get("name", Path(source).stem)), seeds=seeds, problem=problem, budget=budget,
        metric_every=_number(raw.get("metric_every", 10), "metric_every", int, positive=True),
        tolerance=_number(raw.get("tolerance", 1e-3), "tolerance", positive=True),
        mu_ablation=mu_ablation, solvers=clean, output=raw.get("output"), workers=workers,
    )
    cfg.runs = _expand_runs(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigLoadError(str(path), f"cannot read: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigLoadError(str(path), f"invalid YAML: {exc}") from None
    return parse_config(raw, str(path))


# problem construction

def build_problem(problem: dict, seed: int, dataset=None):
    """(problem instance, u0, extras) for one seed; ``dataset`` reuses a loaded SVM dataset."""
    kind = problem["kind"]
    rng = np.random.default_rng(seed)
    if kind == "svm":
        ds = dataset if dataset is not None else svm_dataset(problem, seed)
        prob = build_svm_problem(ds, problem["lam1"], problem["lam2"], problem["x_blocks"],
                                 problem["y_blocks"], problem["scaling"])
        return prob, np.zeros(prob.partition.d), {"dataset": ds}
    if kind == "bilinear":
        M = rng.standard_normal((problem["dx"], problem["dy"]))
        M /= np.linalg.norm(M, 2)
        prob = BilinearSaddle(M, problem["x_blocks"], problem["y_blocks"])
        u0 = rng.standard_normal(prob.partition.d)
        u0 /= np.linalg.norm(u0)
        return prob, u0, {"radius": scaled_norm(u0, prob.scaling)}
    d = problem["d"]
    G = rng.standard_normal((d, d))
    B = rng.standard_normal((d, d))
    S = problem["psd_weight"] * (G @ G.T)
    W = B - B.T
    norm = np.linalg.norm(S + W, 2)
    S, W = S * problem["op_norm"] / norm, W * problem["op_norm"] / norm
    q = rng.standard_normal(d)
    prob = QuadraticVI(S, W, q, mu=problem["mu"], blocks=problem["blocks"])
    return prob, np.zeros(d), {"solution": prob.solution()}


def svm_dataset(problem: dict, seed: int):
    ds = load_dataset(problem["dataset"], problem.get("d"))
    if problem.get("subsample") is not None:
        ds = subsample(ds, problem["subsample"], seed)
    return ds


def make_monitor(problem: dict, prob: LinearVI, extras: dict):
    kind = problem["kind"]
    if kind == "svm":
        ds, d = extras["dataset"], extras["dataset"].d
        lam1, lam2 = problem["lam1"], problem["lam2"]
        return lambda k, u, erg, p: {"primal": svm_primal(u[:d], ds, lam1, lam2)}
    if kind == "bilinear":
        center = np.zeros(prob.partition.d)
        return lambda k, u, erg, p: {"gap": skew_ball_gap(prob, erg, center, extras["radius"])}
    sol = extras["solution"]
    return lambda k, u, erg, p: {"gap": restricted_gap(prob, erg, sol)}


def execute(spec: RunSpec, problem: dict, seed: int, budget: dict, metric_every: int,
            dataset=None):
    """One solver run on a freshly built problem, so meters never mix across runs."""
    prob, u0, extras = build_problem(problem, seed, dataset)
    monitor = make_monitor(problem, prob, extras)
    stop = StopRule(max_cycles=budget.get("cycles"), max_passes=budget.get("passes"))
    if stop.max_cycles is None:
        stop = StopRule(max_cycles=10**9, max_passes=stop.max_passes)
    if spec.solver == "aduca":
        res = run(prob, u0, SolverConfig(**spec.params), stop, monitor, metric_every, timing=False)
    elif spec.solver == "pccm":
        res = pccm_run(prob, u0, PccmConfig(**spec.params), stop, monitor, metric_every, timing=False)
    else:
        res = graal_run(prob, u0, GraalConfig(**spec.params), stop, monitor, metric_every, timing=False)
    res.trace.solver = spec.label
    return res


def passes_to_tolerance(trace: RunTrace, tol: float):
    for rec in trace.records:
        if rec.gap is not None and rec.gap <= tol:
            return rec.passes
    return None


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> dict:
    """Run every (seed, run) pair, write the trace CSVs and ``summary.json``; return the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    summary = {"config": cfg.snapshot(), "seeds": {}}
    for seed in cfg.seeds:
        dataset = svm_dataset(cfg.problem, seed) if cfg.problem["kind"] == "svm" else None
        jobs = [(spec, cfg.problem, seed, cfg.budget, cfg.metric_every, dataset) for spec in cfg.runs]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda job: execute(*job), jobs))
        else:
            results = [execute(*job) for job in jobs]
        fstar = None
        if cfg.problem["kind"] == "svm":
            primals = [r.primal for res in results for r in res.trace.records
                       if r.primal is not None and math.isfinite(r.primal)]
            fstar = min(primals) if primals else None
            for res in results:
                for rec in res.trace.records:
                    if rec.primal is not None and fstar is not None:
                        rec.gap = rec.primal - fstar
        runs = {}
        for spec, res in zip(cfg.runs, results):
            path = out_dir / f"{spec.label}.seed{seed}.csv"
            emit_csv(res.trace, path)
            last = res.trace.records[-1] if res.trace.records else None
            runs[spec.label] = {
                "solver": spec.solver, "params": spec.params, "csv": path.name,
                "cycles": len(res.trace), "passes": last.passes if last else 0.0,
                "final_gap": res.trace.last_value("gap"),
                "final_primal": res.trace.last_value("primal"),
                "passes_to_tol": passes_to_tolerance(res.trace, cfg.tolerance),
                "diverged": res.diverged,
            }
        summary["seeds"][str(seed)] = {"fstar": fstar, "runs": runs}
    text = json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n"
    (out_dir / SUMMARY_NAME).write_text(text, encoding="utf-8")
    return summary


# summary table

TRACE_NAME = re.compile(r"^(?P<label>.+)\.seed(?P<seed>\d+)\.csv$")


def _cell(values, fn) -> str:
    return "n/a" if not values else format(fn(values), ".6g")


def summarize(out_dir, tol: float = 1e-3) -> str:
    """Table of run label against final gap and passes to ``tol``, min and median across seeds."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"{out_dir}: not a directory")
    groups: dict[str, list[RunTrace]] = {}
    for path in sorted(out_dir.glob("*.csv")):
        m = TRACE_NAME.match(path.name)
        label = m.group("label") if m else path.stem
        try:
            trace = read_csv(path)
        except (ValueError, OSError) as exc:
            raise ValueError(f"{path.name}: {exc}") from None
        groups.setdefault(label, []).append(trace)
    header = ["run", "seeds", "final_gap_min", "final_gap_median", "passes_to_tol_min",
              "passes_to_tol_median"]
    rows = [header]
    for label, traces in groups.items():
        gaps = [t.last_value("gap") for t in traces]
        gaps = [g for g in gaps if g is not None]
        hits = [passes_to_tolerance(t, tol) for t in traces]
        hits = [h for h in hits if h is not None]
        rows.append([label, str(len(traces)), _cell(gaps, min), _cell(gaps, statistics.median),
                     _cell(hits, min), _cell(hits, statistics.median)])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def resolve_out(cli_out, cfg: ExperimentConfig) -> Path:
    if cli_out:
        return Path(cli_out)
    if cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / cfg.name


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aduca", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, help="override the config seeds with one seed")
    p_run.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name>)")
    p_run.add_argument("--workers", type=int, help="concurrent runs")
    p_sum = sub.add_parser("summarize", help="tabulate the trace CSVs in a directory")
    p_sum.add_argument("dir")
    p_sum.add_argument("--tol", type=float, default=1e-3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigLoadError("--seed", "must be nonnegative")
                cfg.seeds = [args.seed]
            if args.workers is not None and args.workers < 1:
                raise ConfigLoadError("--workers", "must be positive")
            out = resolve_out(args.out, cfg)
            summary = run_experiment(cfg, out, args.workers)
            n = sum(len(s["runs"]) for s in summary["seeds"].values())
            print(f"wrote {n} traces and {SUMMARY_NAME} to {out}")
        else:
            sys.stdout.write(summarize(args.dir, args.tol))
        return 0
    except (ConfigLoadError, ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"internal assertion failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
