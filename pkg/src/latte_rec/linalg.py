"""Sparse/dense tensor linear algebra: truncated SVD, mode products and HOOI.

Unfoldings use C ordering: the mode-``n`` unfolding of a tensor ``X`` is
``np.moveaxis(X, n, 0).reshape(X.shape[n], -1)``, so contracting the other two
modes with ``B`` and ``C`` (in mode order) produces columns ``a * rc + c``.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp

from . import kernels

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 25


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class SparseTensor3:
    """Coordinate-form third-order tensor; ``values`` default to ones (binary)."""

    dims: tuple
    coords: np.ndarray
    values: np.ndarray = None
    _groups: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if len(dims) != 3 or min(dims) < 0:
            raise ValueError(f"bad tensor dims {self.dims}")
        if len(coords) and ((coords.min(axis=0) < 0).any() or (coords.max(axis=0) >= dims).any()):
            raise ValueError("tensor coordinates out of range")
        values = np.ones(len(coords)) if self.values is None else np.asarray(self.values, dtype=float)
        if values.shape != (len(coords),):
            raise ValueError("values must have one entry per coordinate")
        if len(coords):
            flat = np.ravel_multi_index(coords.T, dims)
            if len(np.unique(flat)) != len(flat):
                raise ValueError("duplicate tensor coordinates")
        coords.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @property
    def nnz(self):
        return len(self.values)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=float)
        coords = np.argwhere(dense != 0)
        return cls(dense.shape, coords, dense[tuple(coords.T)])

    def to_dense(self):
        out = np.zeros(self.dims)
        out[tuple(self.coords.T)] = self.values
        return out

    def norm(self):
        return float(np.sqrt(np.dot(self.values, self.values)))

    def with_values(self, values):
        return SparseTensor3(self.dims, self.coords, values)

    def grouped(self, mode):
        """Entries sorted (stably) by their ``mode`` index, with row pointers."""
        if mode not in self._groups:
            key = self.coords[:, mode]
            order = np.argsort(key, kind="stable")
            counts = np.bincount(key, minlength=self.dims[mode])
            indptr = np.zeros(self.dims[mode] + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._groups[mode] = (order, indptr)
        return self._groups[mode]

    def unfold(self, mode):
        """Sparse C-order mode unfolding, shape ``(dims[mode], prod(other dims))``."""
        others = [m for m in range(3) if m != mode]
        cols = self.coords[:, others[0]] * self.dims[others[1]] + self.coords[:, others[1]]
        shape = (self.dims[mode], self.dims[others[0]] * self.dims[others[1]])
        return sp.csr_matrix((self.values, (self.coords[:, mode], cols)), shape=shape)


@dataclass(frozen=True, eq=False)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return len(self.s)


@dataclass(frozen=True, eq=False)
class TuckerFactors:
    core: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    fit: float
    history: tuple = ()
    iterations: int = 0

    @property
    def ranks(self):
        return self.core.shape

    @property
    def factors(self):
        return (self.u, self.v, self.w)


def fix_signs(u, v=None):
    """Make the largest-magnitude entry of every column of ``u`` positive.

    The same flips are applied to ``v`` (the paired singular vectors).
    """
    if u.shape[1] == 0:
        return u, v
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, (None if v is None else v * signs)


def _dense_svd(a, rank):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, v = fix_signs(u[:, :rank], vt[:rank].T)
    return SvdResult(u, s[:rank], v)


_DENSE_LIMIT = 250_000


def _gram_svd(m, rank):
    """SVD through the Gram matrix of the short side (few rows or columns)."""
    flip = m.shape[0] > m.shape[1]
    a = m.T if flip else m
    gram = a @ a.T
    gram = gram.toarray() if sp.issparse(gram) else np.asarray(gram)
    evals, evecs = np.linalg.eigh(gram)
    idx = np.argsort(evals)[::-1][:rank]
    s = np.sqrt(np.maximum(evals[idx], 0.0))
    left = evecs[:, idx]
    safe = np.where(s > 0, s, 1.0)
    right = np.asarray(a.T @ left) / safe
    if flip:
        left, right = right, left
    u, v = fix_signs(left, right)
    return SvdResult(u, s, v)


def truncated_svd(m, rank, seed=0, tol=1e-10, oversample=10, power_iters=2, max_power_iters=50):
    """Leading ``rank`` singular triplets of a sparse or dense matrix.

    Randomized range finding with ``oversample`` extra columns and at least
    ``power_iters`` power iterations. Power iterations continue (up to
    ``max_power_iters``) until the leading singular values change by less than
    ``tol`` relative to the largest one. Small problems are solved exactly.
    """
    rows, cols = m.shape
    if not 1 <= rank <= min(rows, cols):
        raise ValueError(f"rank {rank} outside [1, {min(rows, cols)}]")
    short = min(rows, cols)
    width = min(rank + oversample, short)
    if rows * cols <= _DENSE_LIMIT:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)
        return _dense_svd(dense, rank)
    if width >= short:
        return _gram_svd(m, rank)

    rng = np.random.default_rng(seed)
    mt = m.T
    q, _ = np.linalg.qr(m @ rng.standard_normal((cols, width)))
    prev = None
    for it in range(max_power_iters):
        z, _ = np.linalg.qr(mt @ q)
        q, r = np.linalg.qr(m @ z)
        if it + 1 >= power_iters:
            # m z = q r, so r carries the current singular value estimates
            s = np.linalg.svd(r, compute_uv=False)[:rank]
            scale = max(s[0], np.finfo(float).tiny)
            if prev is not None and np.max(np.abs(s - prev)) <= tol * scale:
                break
            prev = s
    small = np.asarray(mt @ q).T
    ub, s, vt = np.linalg.svd(small, full_matrices=False)
    u, v = fix_signs(q @ ub[:, :rank], vt[:rank].T)
    return SvdResult(u, s[:rank], v)


def mode_product(t, m, mode):
    """n-mode product ``t x_mode m`` for a dense array or ``SparseTensor3``.

    ``mode`` is 1-based; ``m`` has shape ``(p, dims[mode])``. Result is dense.
    """
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    m = np.atleast_2d(np.asarray(m, dtype=float))
    axis = mode - 1
    if isinstance(t, SparseTensor3):
        if m.shape[1] != t.dims[axis]:
            raise ValueError(f"matrix has {m.shape[1]} columns, tensor mode {mode} has size {t.dims[axis]}")
        others = [a for a in range(3) if a != axis]
        flat = t.unfold(axis)  # dims[axis] x (others)
        prod = np.asarray((flat.T @ m.T).T)  # p x (others)
        out = prod.reshape(m.shape[0], t.dims[others[0]], t.dims[others[1]])
        return np.moveaxis(out, 0, axis)
    t = np.asarray(t, dtype=float)
    if t.ndim != 3 or m.shape[1] != t.shape[axis]:
        raise ValueError(f"matrix shape {m.shape} incompatible with tensor shape {t.shape} along mode {mode}")
    return np.moveaxis(np.tensordot(m, t, axes=(1, axis)), 0, axis)


def contract_others(t, factors, mode, backend=None):
    """Unfolding of ``t`` along ``mode`` (0-based) times the other two factors.

    Returns ``X_(mode) @ kron(F_a, F_b)`` of shape ``(dims[mode], ra * rb)``,
    with ``a < b`` the remaining modes. Never densifies ``t``.
    """
    a, b = [m for m in range(3) if m != mode]
    order, indptr = t.grouped(mode)
    coords = t.coords[order]
    return kernels.contract_two(
        indptr,
        np.ascontiguousarray(coords[:, a]),
        np.ascontiguousarray(coords[:, b]),
        np.ascontiguousarray(t.values[order]),
        np.ascontiguousarray(factors[a], dtype=float),
        np.ascontiguousarray(factors[b], dtype=float),
        backend=backend,
    )


def expand_rating_mode(t, scaler):
    """Sparse form of ``t x_3 scaler`` (rating fibres become dense)."""
    scaler = np.asarray(scaler, dtype=float)
    k = t.dims[2]
    if scaler.shape != (k, k):
        raise ValueError(f"rating scaler must be {k}x{k}, got {scaler.shape}")
    pairs = t.coords[:, 0] * t.dims[1] + t.coords[:, 1]
    uniq, inv = np.unique(pairs, return_inverse=True)
    fibres = sp.csr_matrix((t.values, (inv, t.coords[:, 2])), shape=(len(uniq), k)) @ scaler.T
    fibres = np.asarray(fibres)
    rows, ks = np.nonzero(fibres)
    coords = np.column_stack([uniq[rows] // t.dims[1], uniq[rows] % t.dims[1], ks])
    return SparseTensor3(t.dims, coords, fibres[rows, ks])


_SLAB_ENTRIES = 1 << 20
# below this relative residual the norm identity loses too many digits
_CANCELLATION_LIMIT = 1e-6


def _residual_sq(t, core, u, v, w):
    """``||X - G x U x V x W||^2`` by explicit differences, one user slab at a time."""
    n, k = t.dims[1], t.dims[2]
    step = max(1, _SLAB_ENTRIES // max(n * k, 1))
    order, indptr = t.grouped(0)
    coords, vals = t.coords[order], t.values[order]
    gv = np.einsum("abc,jb,kc->ajk", core, v, w).reshape(core.shape[0], -1)
    total = 0.0
    for lo in range(0, t.dims[0], step):
        hi = min(lo + step, t.dims[0])
        slab = -(u[lo:hi] @ gv)
        a, b = indptr[lo], indptr[hi]
        np.add.at(slab, (coords[a:b, 0] - lo, coords[a:b, 1] * k + coords[a:b, 2]), vals[a:b])
        total += float(np.sum(slab * slab))
    return total


def _tucker_fit(norm_sq, core, exact=None):
    """Fit from the norm identity; ``exact()`` refines it when the residual is tiny."""
    if norm_sq == 0.0:
        return 1.0 if not np.any(core) else 0.0
    resid = max(norm_sq - float(np.sum(core * core)), 0.0)
    if exact is not None and resid < _CANCELLATION_LIMIT * norm_sq:
        resid = exact()
    return 1.0 - np.sqrt(resid) / np.sqrt(norm_sq)


def fit(t, f):
    """Tucker fit ``1 - ||X - G x U x V x W|| / ||X||`` for orthonormal factors.

    Uses ``||X - X_hat||^2 = ||X||^2 - ||G||^2`` after re-projecting the core
    onto the given factors, so ``X`` is never densified.
    """
    u, v, w = (np.asarray(x, dtype=float) for x in f.factors)
    if (u.shape[0], v.shape[0], w.shape[0]) != t.dims:
        raise ValueError("factor row counts do not match tensor dims")
    norm_sq = t.norm() ** 2
    if norm_sq == 0.0:
        return 1.0 if not np.any(f.core) else 0.0
    if not (np.any(u) and np.any(v) and np.any(w)):
        return 0.0
    core = (w.T @ contract_others(t, (u, v, w), 2)).reshape(w.shape[1], u.shape[1], v.shape[1])
    core = core.transpose(1, 2, 0)
    return _tucker_fit(norm_sq, core, lambda: _residual_sq(t, core, u, v, w))


def _init_factor(m, rank, seed):
    """HOSVD factor: leading left singular vectors of a (wide) unfolding."""
    rows, cols = m.shape
    nnz = m.nnz if sp.issparse(m) else rows * cols
    if rows * cols <= _DENSE_LIMIT or cols <= rows or rows * rows > 4 * nnz:
        # the Gram would be denser than m itself; iterate on m directly
        return truncated_svd(m, rank, seed=seed).u
    # left singular vectors of m are the eigenvectors of the PSD Gram m m^T
    return truncated_svd(m @ m.T, rank, seed=seed).u


def _leading(mat, rank):
    """Exact leading left singular vectors of a thin dense matrix."""
    return _dense_svd(mat, rank).u


def hooi(t, ranks, rating_scaler=None, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, seed=0,
         callback=None, backend=None):
    """Tucker decomposition by higher-order orthogonal iteration.

    With ``rating_scaler`` (a K x K matrix, typically K^{1/2}) the
    decomposition is of the auxiliary tensor ``t x_3 rating_scaler`` and the
    returned ``w`` lives in that auxiliary space.

    Factors are initialised by HOSVD and refreshed mode by mode; iteration
    stops once the fit improves by less than ``tol`` or after ``max_iters``
    sweeps. ``callback(iteration, factors)`` is invoked after initialisation
    and after every sweep.
    """
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3:
        raise ValueError("ranks must be a triple")
    for r, d in zip(ranks, t.dims):
        if not 1 <= r <= d:
            raise ValueError(f"rank {r} exceeds tensor dimension {d} (ranks {ranks}, dims {t.dims})")
    r1, r2, r3 = ranks
    if r1 > r2 * r3 or r2 > r1 * r3 or r3 > r1 * r2:
        # a mode-m unfolding of the core has only prod(other ranks) columns
        raise ValueError(f"ranks {ranks} are not a valid Tucker rank: each must be at most the product of the others")

    if rating_scaler is not None:
        scaler = np.asarray(rating_scaler, dtype=float)
        aux = expand_rating_mode(t, scaler)
    else:
        scaler = None
        aux = t
    norm_sq = aux.norm() ** 2

    factors = [_init_factor(aux.unfold(m), ranks[m], seed + m) for m in range(3)]

    def mode3_product(u, v):
        # X_hat_(3) (U kron V) = scaler @ X_(3) (U kron V)
        y = contract_others(t, (u, v, None), 2, backend=backend)
        return y if scaler is None else scaler @ y

    def refresh(mode, u, v, w):
        w_eff = w if scaler is None else scaler.T @ w
        fs = (u, v, w_eff)
        return _leading(contract_others(t, fs, mode, backend=backend), ranks[mode])

    def core_of(u, v, w):
        return (w.T @ mode3_product(u, v)).reshape(ranks[2], ranks[0], ranks[1]).transpose(1, 2, 0)

    core = core_of(*factors)
    fit_value = _tucker_fit(norm_sq, core, lambda: _residual_sq(aux, core, *factors))
    history = [fit_value]
    if callback is not None:
        callback(0, TuckerFactors(core, *factors, fit=fit_value))

    it = 0
    for it in range(1, max_iters + 1):
        u, v, w = factors
        u = refresh(0, u, v, w)
        v = refresh(1, u, v, w)
        y3 = mode3_product(u, v)
        w = _leading(y3, ranks[2])
        factors = [u, v, w]
        core = (w.T @ y3).reshape(ranks[2], ranks[0], ranks[1]).transpose(1, 2, 0)
        new_fit = _tucker_fit(norm_sq, core, lambda: _residual_sq(aux, core, u, v, w))
        if not np.isfinite(new_fit):
            raise ConvergenceError(f"non-finite fit at iteration {it}")
        history.append(new_fit)
        if callback is not None:
            callback(it, TuckerFactors(core, *factors, fit=new_fit))
        improvement = new_fit - fit_value
        fit_value = new_fit
        if improvement < tol:
            break
    log.debug("hooi ranks=%s iterations=%d fit=%.6f", ranks, it, fit_value)
    return TuckerFactors(core, *factors, fit=fit_value, history=tuple(history), iterations=it)
