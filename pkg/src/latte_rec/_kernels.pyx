# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled contraction kernels for sparse third-order tensors."""
import numpy as np
cimport numpy as cnp
from cython.parallel import prange

cnp.import_array()


def contract_two(const cnp.int64_t[::1] indptr,
                 const cnp.int64_t[::1] b_idx,
                 const cnp.int64_t[::1] c_idx,
                 const double[::1] vals,
                 const double[:, ::1] B,
                 const double[:, ::1] C,
                 int num_threads=1):
    """Row-grouped sparse tensor times two factor matrices.

    Entries must be grouped by output row through ``indptr``. Row ``r`` of the
    result is ``sum_e vals[e] * kron(B[b_idx[e]], C[c_idx[e]])`` over the
    entries of that row, accumulated in entry order, so the output does not
    depend on ``num_threads``.
    """
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t rb = B.shape[1]
    cdef Py_ssize_t rc = C.shape[1]
    out = np.zeros((n_rows, rb * rc), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, e, a, c, jb, jc
    cdef double scaled
    if n_rows == 0 or rb == 0 or rc == 0:
        return out
    with nogil:
        for r in prange(n_rows, num_threads=max(num_threads, 1), schedule="dynamic"):
            for e in range(indptr[r], indptr[r + 1]):
                jb = b_idx[e]
                jc = c_idx[e]
                for a in range(rb):
                    scaled = vals[e] * B[jb, a]
                    for c in range(rc):
                        o[r, a * rc + c] += scaled * C[jc, c]
    return out
