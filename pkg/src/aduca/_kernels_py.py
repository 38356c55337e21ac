"""Numpy/scipy fallback with the same signatures as the compiled kernels."""

import numpy as np
from scipy import sparse


def csr_rows_spliced(indptr, indices, data, u_new, u_old, r0, r1, split, out):
    lo, hi = indptr[r0], indptr[r1]
    w = np.concatenate((u_new[:split], u_old[split:]))
    rows = sparse.csr_matrix(
        (data[lo:hi], indices[lo:hi], indptr[r0:r1 + 1] - lo),
        shape=(r1 - r0, w.shape[0]),
    )
    # scipy sums each row left to right from 0.0, like the compiled loop
    out[: r1 - r0] = rows @ w


def prox_coordinatewise(v, lin, a, lam, l1, l2, lo, hi, out):
    z = v - a * lin / lam
    t = np.maximum(np.abs(z) - a * l1 / lam, 0.0)
    w = np.sign(z) * (t / (1.0 + a * l2 / lam))
    np.clip(w, lo, hi, out=out)
