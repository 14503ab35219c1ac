# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for entrywise-sampled matrix operators.

These are the only inner loops in the package that are not already serviced
by BLAS/LAPACK: gathering sampled entries of a factored product and
scatter-accumulating row/column statistics of an entrywise-sparse matrix.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def factored_entries(double[:, ::1] left, double[:, ::1] right,
                     long long[::1] rows, long long[::1] cols,
                     double[::1] out):
    """out[k] = <left[rows[k], :], right[cols[k], :]> for every sample k."""
    cdef Py_ssize_t m = rows.shape[0]
    cdef Py_ssize_t r = left.shape[1]
    cdef Py_ssize_t k, j
    cdef double acc
    for k in range(m):
        acc = 0.0
        for j in range(r):
            acc += left[rows[k], j] * right[cols[k], j]
        out[k] = acc


def index_sqnorms(long long[::1] rows, long long[::1] cols,
                  double[::1] vals,
                  double[::1] row_out, double[::1] col_out):
    """Accumulate vals[k]**2 into row_out[rows[k]] and col_out[cols[k]]."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t k
    cdef double v2
    for k in range(m):
        v2 = vals[k] * vals[k]
        row_out[rows[k]] += v2
        col_out[cols[k]] += v2


def scale_entries(long long[::1] rows, long long[::1] cols,
                  double[::1] vals,
                  double[::1] row_scale, double[::1] col_scale,
                  double[::1] out):
    """out[k] = vals[k] * row_scale[rows[k]] * col_scale[cols[k]]."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t k
    for k in range(m):
        out[k] = vals[k] * row_scale[rows[k]] * col_scale[cols[k]]
