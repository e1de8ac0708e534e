"""Numpy implementations of the compiled kernels (import-time fallback)."""
import numpy as np
import scipy.sparse as sp

# Entries processed per block; bounds the (block, rb*rc) Kronecker buffer.
_BLOCK = 1 << 15


def contract_two(indptr, b_idx, c_idx, vals, B, C, num_threads=1):
    """Same contract as the compiled ``contract_two``; ``num_threads`` is ignored."""
    n_rows = len(indptr) - 1
    rb, rc = B.shape[1], C.shape[1]
    out = np.zeros((n_rows, rb * rc))
    nnz = len(vals)
    if nnz == 0 or rb == 0 or rc == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    for start in range(0, nnz, _BLOCK):
        stop = min(start + _BLOCK, nnz)
        kron = (B[b_idx[start:stop], :, None] * C[c_idx[start:stop], None, :]).reshape(stop - start, rb * rc)
        scatter = sp.csr_matrix(
            (vals[start:stop], (rows[start:stop], np.arange(stop - start))),
            shape=(n_rows, stop - start),
        )
        out += scatter @ kron
    return out
