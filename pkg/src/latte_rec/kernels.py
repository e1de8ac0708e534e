"""Backend selection for the hot contraction kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Set ``LATTE_REC_BACKEND=python`` to force the fallback.
``LATTE_REC_THREADS`` caps the worker threads of the compiled backend.
"""
import os

from . import _pykernels

if os.environ.get("LATTE_REC_BACKEND", "").lower() == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def thread_count():
    value = os.environ.get("LATTE_REC_THREADS")
    if not value:
        return os.cpu_count() or 1
    return max(int(value), 1)


def contract_two(indptr, b_idx, c_idx, vals, B, C, backend=None):
    """Dispatch to the selected (or explicitly requested) backend."""
    impl = _impl
    if backend == "python":
        impl = _pykernels
    elif backend == "cython":
        from . import _kernels as impl
    return impl.contract_two(indptr, b_idx, c_idx, vals, B, C, thread_count())
