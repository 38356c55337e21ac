# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: spliced CSR row products and the coordinatewise prox."""

from libc.math cimport fabs

ctypedef long long idx_t


def csr_rows_spliced(const idx_t[::1] indptr, const idx_t[::1] indices,
                     const double[::1] data, const double[::1] u_new,
                     const double[::1] u_old, Py_ssize_t r0, Py_ssize_t r1,
                     Py_ssize_t split, double[::1] out):
    """out[r - r0] = sum_j J[r, j] * w[j] where w takes u_new below `split`, u_old from it."""
    cdef Py_ssize_t r, p, c
    cdef double acc
    with nogil:
        for r in range(r0, r1):
            acc = 0.0
            for p in range(indptr[r], indptr[r + 1]):
                c = indices[p]
                if c < split:
                    acc = acc + data[p] * u_new[c]
                else:
                    acc = acc + data[p] * u_old[c]
            out[r - r0] = acc


def prox_coordinatewise(const double[::1] v, const double[::1] lin, double a,
                        const double[::1] lam, const double[::1] l1,
                        const double[::1] l2, const double[::1] lo,
                        const double[::1] hi, double[::1] out):
    """Elastic-net shrink followed by a box clamp, one coordinate at a time."""
    cdef Py_ssize_t j, n = v.shape[0]
    cdef double z, t, w
    with nogil:
        for j in range(n):
            z = v[j] - a * lin[j] / lam[j]
            t = fabs(z) - a * l1[j] / lam[j]
            if t <= 0.0:
                w = 0.0
            else:
                w = t / (1.0 + a * l2[j] / lam[j])
                if z < 0.0:
                    w = -w
            if w < lo[j]:
                w = lo[j]
            elif w > hi[j]:
                w = hi[j]
            out[j] = w
