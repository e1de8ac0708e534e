"""Recommendation models and folding-in prediction.

Matrix models (random, most_popular, pure_svd, ease) score every item with a
single number. Tensor models (coffee, latte) return an items x ratings slice
that a context aggregation collapses to one score per item.
"""
from dataclasses import dataclass, field
import zlib

import numpy as np
import scipy.sparse as sp

from . import linalg
from .similarity import DependencyLaw, SimilarityMatrix, build_similarity, law as as_law

MODEL_KINDS = ("random", "most_popular", "pure_svd", "ease", "coffee", "latte")
TENSOR_KINDS = ("coffee", "latte")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    rank: int = None
    ranks: tuple = None
    normalization_factor: float = 1.0
    law: DependencyLaw = None
    l2: float = None
    seed: int = 0
    max_iters: int = linalg.DEFAULT_MAX_ITERS
    tol: float = linalg.DEFAULT_TOL

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; choose from {', '.join(MODEL_KINDS)}")
        if kind == "pure_svd" and not self.rank:
            raise ModelError("pure_svd needs a rank")
        if kind in TENSOR_KINDS:
            if self.ranks is None or len(self.ranks) != 3:
                raise ModelError(f"{kind} needs ranks (r1, r2, r3)")
            object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if kind == "ease" and (self.l2 is None or self.l2 < 0):
            raise ModelError("ease needs a non-negative l2 penalty")
        if kind == "latte":
            object.__setattr__(self, "law", as_law(self.law or "linear"))
        elif self.law is not None:
            raise ModelError(f"law only applies to latte, not {kind}")
        if not 0.0 <= self.normalization_factor <= 2.0:
            raise ModelError(f"normalization factor must lie in [0, 2], got {self.normalization_factor}")

    @property
    def size(self):
        """Model size used for tie-breaking (smaller wins)."""
        if self.kind in TENSOR_KINDS:
            return tuple(self.ranks)
        return (self.rank or 0,)

    def describe(self):
        parts = [self.kind]
        if self.rank:
            parts.append(f"rank={self.rank}")
        if self.ranks:
            parts.append("ranks=" + ",".join(map(str, self.ranks)))
        if self.kind in ("pure_svd", "coffee", "latte"):
            parts.append(f"f={self.normalization_factor:g}")
        if self.law is not None:
            parts.append(f"law={self.law.cli_name}")
        if self.l2 is not None:
            parts.append(f"l2={self.l2:g}")
        return " ".join(parts)


@dataclass(frozen=True)
class ContextAggregation:
    name: str
    weights: tuple

    @classmethod
    def named(cls, name, k=5):
        """Context by name for a ``k``-value scale, counted from the top rating."""
        top = np.zeros(k)
        if name == "only5":
            top[-1:] = 1
        elif name == "45":
            top[-2:] = 1
        elif name == "345":
            top[-3:] = 1
        elif name == "345m21":
            top[:] = -1
            top[-3:] = 1
        else:
            raise ValueError(f"unknown context {name!r}; choose from {', '.join(CONTEXTS)}")
        return cls(name, tuple(float(x) for x in top))


CONTEXTS = ("only5", "45", "345", "345m21")


@dataclass(frozen=True, eq=False)
class ScoreSlice:
    user: object
    scores: np.ndarray


@dataclass(frozen=True, eq=False)
class TrainedModel:
    config: ModelConfig
    n_items: int
    n_ratings: int
    rating_values: tuple
    item_scaling: np.ndarray = None
    item_factors: np.ndarray = None
    tucker: linalg.TuckerFactors = None
    rating_factors: np.ndarray = None
    similarity: SimilarityMatrix = None
    popularity: np.ndarray = None
    weights: np.ndarray = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def kind(self):
        return self.config.kind

    @property
    def is_tensor(self):
        return self.kind in TENSOR_KINDS

    @property
    def rating_projector(self):
        """K x K matrix applied on the right of ``V V^T P``.

        CoFFee: ``W W^T``; LaTTe: ``K^{1/2} W W^T K^{-1/2}``.
        """
        if "projector" not in self._cache:
            w = self.rating_factors
            proj = w @ w.T
            if self.similarity is not None and self.similarity.law.kind != "identity":
                proj = self.similarity.sqrt @ proj @ self.similarity.inv_sqrt
            self._cache["projector"] = proj
        return self._cache["projector"]

    def predict_slice(self, history, user=None):
        """Folding-in scores for one user from a binary N x K preference matrix."""
        p = history.toarray() if sp.issparse(history) else np.asarray(history, dtype=float)
        if p.shape != (self.n_items, self.n_ratings):
            raise ModelError(f"preference matrix must be {self.n_items}x{self.n_ratings}, got {p.shape}")
        kind = self.kind
        if self.is_tensor:
            v = self.item_factors
            scaled = p * self.item_scaling[:, None]
            return ScoreSlice(user, v @ ((v.T @ scaled) @ self.rating_projector))
        if kind == "random":
            return ScoreSlice(user, _random_scores(self.config.seed, user, self.n_items))
        if kind == "most_popular":
            return ScoreSlice(user, self.popularity.astype(float).copy())
        if kind == "pure_svd":
            values = p @ np.asarray(self.rating_values, dtype=float)
            v = self.item_factors
            return ScoreSlice(user, v @ (v.T @ (values * self.item_scaling)))
        binary = (p.sum(axis=1) > 0).astype(float)
        return ScoreSlice(user, binary @ self.weights)

    def score_users(self, users, histories, contexts):
        """Aggregated scores for many users at once.

        ``histories`` is a list of ``(item_codes, rating_axis)`` pairs aligned
        with ``users``. Returns ``{context_name: (len(users), N) array}``;
        matrix models give the same array for every context.
        """
        n = len(users)
        kind = self.kind
        if self.is_tensor:
            rows, cols, vals = _history_coo(histories, lambda it, ax, b: (b * self.n_ratings + ax, it))
            vals = self.item_scaling[cols]
            s = sp.csr_matrix((vals, (rows, cols)), shape=(n * self.n_ratings, self.n_items))
            v = self.item_factors
            proj_t = (s @ v).reshape(n, self.n_ratings, v.shape[1])  # (V^T P_i)^T per user
            out = {}
            for ctx in contexts:
                vec = self.rating_projector @ np.asarray(ctx.weights)
                out[ctx.name] = np.einsum("bkr,k->br", proj_t, vec) @ v.T
            return out
        if kind == "random":
            scores = np.vstack([_random_scores(self.config.seed, u, self.n_items) for u in users]) if n else np.zeros((0, self.n_items))
        elif kind == "most_popular":
            scores = np.tile(self.popularity.astype(float), (n, 1))
        else:
            rows, cols, _ = _history_coo(histories, lambda it, ax, b: (np.full(len(it), b), it))
            if kind == "pure_svd":
                axes = np.concatenate([ax for _, ax in histories]) if n else np.zeros(0, np.int64)
                vals = np.asarray(self.rating_values, dtype=float)[axes] * self.item_scaling[cols]
                m = sp.csr_matrix((vals, (rows, cols)), shape=(n, self.n_items))
                v = self.item_factors
                scores = np.asarray(m @ v) @ v.T
            else:
                m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, self.n_items))
                m.data[:] = 1.0
                scores = np.asarray(m @ self.weights)
        return {ctx.name: scores for ctx in contexts}


def _history_coo(histories, index_fn):
    rows, cols = [], []
    for b, (items, axes) in enumerate(histories):
        r, c = index_fn(np.asarray(items), np.asarray(axes), b)
        rows.append(np.asarray(r, dtype=np.int64))
        cols.append(np.asarray(c, dtype=np.int64))
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), None
    return np.concatenate(rows), np.concatenate(cols), None


def _random_scores(seed, user, n_items):
    key = zlib.crc32(str(user).encode("utf-8"))
    return np.random.default_rng([int(seed), key]).random(n_items)


def preference_matrix(n_items, n_ratings, items, axes):
    """Binary N x K matrix with ones at ``(items[t], axes[t])``."""
    p = np.zeros((n_items, n_ratings))
    p[np.asarray(items, dtype=np.int64), np.asarray(axes, dtype=np.int64)] = 1.0
    return p


def aggregate_context(slice_, ctx):
    scores = slice_.scores if isinstance(slice_, ScoreSlice) else np.asarray(slice_)
    if scores.ndim == 1:
        return scores
    weights = np.asarray(ctx.weights, dtype=float)
    if scores.shape[1] != len(weights):
        raise ModelError(f"context {ctx.name!r} has {len(weights)} weights for {scores.shape[1]} rating columns")
    return scores @ weights


def topn(scores, n, seen=()):
    """Indices of the ``n`` best unseen items, ties broken by lower index."""
    scores = np.asarray(scores, dtype=float)
    mask = np.ones(len(scores), dtype=bool)
    seen = np.fromiter(seen, dtype=np.int64) if not isinstance(seen, np.ndarray) else seen.astype(np.int64)
    if len(seen):
        mask[seen] = False
    cand = np.flatnonzero(mask)
    if len(cand) > n:
        vals = scores[cand]
        # keep everything tied with the n-th best so tie-breaking stays exact
        kth = np.partition(vals, len(vals) - n)[len(vals) - n]
        cand = cand[vals >= kth]
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:n]].tolist()


# --- training ------------------------------------------------------------------

def _item_norm_scaling(norms, factor):
    norms = np.asarray(norms, dtype=float)
    out = np.zeros_like(norms)
    nz = norms > 0
    out[nz] = norms[nz] ** (factor - 1.0)
    return out


def rating_matrix(train, tensor):
    """Users x items matrix of native rating values (one rating per pair)."""
    values = np.asarray(train.scale.values, dtype=float)[tensor.coords[:, 2]]
    return sp.csr_matrix(
        (values, (tensor.coords[:, 0], tensor.coords[:, 1])), shape=tensor.dims[:2]
    )


def train(config, train_data, tensor):
    """Fit ``config`` on the training dataset and its tensor."""
    from .data import build_tensor  # local: data imports linalg only

    if tensor is None:
        tensor = build_tensor(train_data)
    n_users, n_items, k = tensor.dims
    base = dict(config=config, n_items=n_items, n_ratings=k, rating_values=train_data.scale.values)
    kind = config.kind

    if kind == "random":
        return TrainedModel(**base)
    if kind == "most_popular":
        counts = np.bincount(tensor.coords[:, 1], minlength=n_items)
        return TrainedModel(**base, popularity=counts)
    if kind == "pure_svd":
        r = rating_matrix(train_data, tensor)
        if config.rank > min(r.shape):
            raise ModelError(f"rank {config.rank} exceeds matrix dims {r.shape}")
        norms = np.sqrt(np.asarray(r.multiply(r).sum(axis=0)).ravel())
        scaling = _item_norm_scaling(norms, config.normalization_factor)
        res = linalg.truncated_svd(r @ sp.diags(scaling), config.rank, seed=config.seed)
        return TrainedModel(**base, item_scaling=scaling, item_factors=res.v)
    if kind == "ease":
        x = sp.csr_matrix((np.ones(tensor.nnz), (tensor.coords[:, 0], tensor.coords[:, 1])), shape=(n_users, n_items))
        return TrainedModel(**base, weights=ease_weights(x, config.l2))

    # tensor models
    counts = np.bincount(tensor.coords[:, 1], minlength=n_items)
    scaling = _item_norm_scaling(np.sqrt(counts), config.normalization_factor)
    scaled = tensor.with_values(tensor.values * scaling[tensor.coords[:, 1]])
    for r, d in zip(config.ranks, tensor.dims):
        if r > d:
            raise ModelError(f"ranks {config.ranks} exceed tensor dims {tensor.dims}")
    r1, r2, r3 = config.ranks
    if r1 > r2 * r3 or r2 > r1 * r3 or r3 > r1 * r2:
        raise ModelError(f"ranks {config.ranks}: each rank must be at most the product of the other two")
    if kind == "coffee":
        tf = linalg.hooi(scaled, config.ranks, max_iters=config.max_iters, tol=config.tol, seed=config.seed)
        return TrainedModel(**base, item_scaling=scaling, item_factors=tf.v, tucker=tf, rating_factors=tf.w)
    sim = build_similarity(config.law, k)
    if sim.law.kind == "identity":
        tf = linalg.hooi(scaled, config.ranks, max_iters=config.max_iters, tol=config.tol, seed=config.seed)
        w = tf.w
    else:
        tf = linalg.hooi(scaled, config.ranks, rating_scaler=sim.sqrt, max_iters=config.max_iters,
                         tol=config.tol, seed=config.seed)
        w = sim.inv_sqrt @ tf.w
    return TrainedModel(**base, item_scaling=scaling, item_factors=tf.v, tucker=tf, rating_factors=w,
                        similarity=sim)


def ease_weights(x, l2):
    """Closed-form item-item weights with zero diagonal.

    ``B = I - P diag(1 / diag(P))`` with ``P = (X^T X + l2 I)^{-1}``.
    """
    gram = np.asarray((x.T @ x).toarray() if sp.issparse(x) else x.T @ x, dtype=float)
    gram[np.diag_indices_from(gram)] += l2
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise ModelError(f"EASE gram matrix is singular; l2={l2} is too small") from None
    # pivots at rounding level mean the system is singular up to round-off
    if np.min(np.abs(np.diag(chol))) ** 2 <= len(gram) * np.finfo(float).eps * max(np.abs(gram).max(), 1.0):
        raise ModelError(f"EASE gram matrix is numerically singular; l2={l2} is too small")
    inv_chol = np.linalg.inv(chol)
    p = inv_chol.T @ inv_chol
    b = -p / np.diag(p)
    np.fill_diagonal(b, 0.0)
    return b

