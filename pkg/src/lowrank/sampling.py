"""Sampling kernels: compiled core with a pure-numpy fallback.

The compiled extension (``lowrank._sampling_core``) is selected at import
time when it is present and the environment variable ``LOWRANK_DISABLE_EXT``
is unset.  Both backends implement the same three operations and agree to
floating-point roundoff; ``tests/test_sampling_backends.py`` checks this and
``benchmarks/bench_sampling.py`` compares their speed.
"""

import os

import numpy as np

__all__ = ["BACKEND", "factored_entries", "index_sqnorms", "scale_entries"]


def _np_factored_entries(left, right, rows, cols, out):
    np.einsum("ij,ij->i", left[rows], right[cols], out=out)


def _np_index_sqnorms(rows, cols, vals, row_out, col_out):
    sq = vals * vals
    row_out += np.bincount(rows, weights=sq, minlength=row_out.shape[0])
    col_out += np.bincount(cols, weights=sq, minlength=col_out.shape[0])


def _np_scale_entries(rows, cols, vals, row_scale, col_scale, out):
    np.multiply(vals, row_scale[rows], out=out)
    out *= col_scale[cols]


_ext = None
if not os.environ.get("LOWRANK_DISABLE_EXT"):
    try:
        from lowrank import _sampling_core as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "numpy"


def factored_entries(left, right, rows, cols, out=None):
    """Entries of ``left @ right.T`` at the index pairs ``(rows, cols)``.

    ``left`` is (n1, k), ``right`` is (n2, k); returns a length-m vector with
    element k equal to the (rows[k], cols[k]) entry of the product.
    """
    m = rows.shape[0]
    if out is None:
        out = np.empty(m)
    if _ext is not None:
        _ext.factored_entries(left, right, rows, cols, out)
    else:
        _np_factored_entries(left, right, rows, cols, out)
    return out


def index_sqnorms(rows, cols, vals, n1, n2):
    """Row and column squared 2-norms of the sparse matrix {vals on (rows, cols)}."""
    row_out = np.zeros(n1)
    col_out = np.zeros(n2)
    if _ext is not None:
        _ext.index_sqnorms(rows, cols, vals, row_out, col_out)
    else:
        _np_index_sqnorms(rows, cols, vals, row_out, col_out)
    return row_out, col_out


def scale_entries(rows, cols, vals, row_scale, col_scale, out=None):
    """Entrywise rescaling vals[k] * row_scale[rows[k]] * col_scale[cols[k]]."""
    if out is None:
        out = np.empty_like(vals)
    if _ext is not None:
        _ext.scale_entries(rows, cols, vals, row_scale, col_scale, out)
    else:
        _np_scale_entries(rows, cols, vals, row_scale, col_scale, out)
    return out
