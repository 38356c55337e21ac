"""Time the compiled kernels against the numpy/scipy fallback.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 20] [--blocks 1 16 128]

Reports the median wall time per call of one full spliced operator sweep
(all blocks) and of a full proximal sweep, plus the speedup. Both backends
are checked to agree before timing.
"""

import argparse
import statistics
import time

import numpy as np

from aduca.data import build_svm_problem, make_a9a_like
from aduca.kernels import get_backend


def sweep_operator(kern, prob, u_new, u_old, out):
    part = prob.partition
    for i in range(part.m):
        sl = part.block(i)
        kern.csr_rows_spliced(prob._indptr, prob._indices, prob._data, u_new, u_old,
                              sl.start, sl.stop, sl.start, out[sl])


def sweep_prox(kern, prob, v, lin, out):
    part = prob.partition
    for i in range(part.m):
        sl = part.block(i)
        l1, l2, lo, hi = prob._reg_blocks[i]
        kern.prox_coordinatewise(v[sl], lin[sl], 0.5, prob._lam_blocks[i], l1, l2, lo, hi, out[sl])


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--blocks", type=int, nargs="+", default=[1, 16, 128])
    args = parser.parse_args(argv)

    ds = make_a9a_like(args.n, 0)
    rng = np.random.default_rng(0)
    backends = {name: get_backend(name) for name in ("python", "compiled")}
    print(f"{'blocks':>6}  {'kernel':<8}  {'python_ms':>10}  {'compiled_ms':>11}  {'speedup':>7}")
    for y_blocks in args.blocks:
        prob = build_svm_problem(ds, 1e-4, 1e-4, 1, min(y_blocks, ds.n), True)
        d = prob.partition.d
        u_new, u_old = rng.standard_normal(d), rng.standard_normal(d)
        v, lin = rng.standard_normal(d), rng.standard_normal(d)
        outs = {name: (np.empty(d), np.empty(d)) for name in backends}
        for name, kern in backends.items():
            sweep_operator(kern, prob, u_new, u_old, outs[name][0])
            sweep_prox(kern, prob, v, lin, outs[name][1])
        for j in range(2):
            np.testing.assert_allclose(outs["python"][j], outs["compiled"][j], rtol=1e-12, atol=1e-15)
        for label, fn in (("operator", sweep_operator), ("prox", sweep_prox)):
            args_for = (u_new, u_old) if label == "operator" else (v, lin)
            ms = {name: 1e3 * median_time(
                lambda kern=kern, name=name: fn(kern, prob, *args_for, outs[name][0]), args.repeat)
                for name, kern in backends.items()}
            print(f"{prob.partition.m:>6}  {label:<8}  {ms['python']:>10.3f}  {ms['compiled']:>11.3f}"
                  f"  {ms['python'] / ms['compiled']:>7.1f}")


if __name__ == "__main__":
    main()
