"""Datasets of (user, item, rating, timestamp) events and their preprocessing.

Covers ingestion, dense index assignment, the temporal train/test split, the
double leave-last-out holdouts, rating-scale coarsening, tensor construction
and a synthetic two-cohort generator with shifted rating habits.
"""
from dataclasses import dataclass, field
import csv
import math
from pathlib import Path

import numpy as np

from .linalg import SparseTensor3


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RatingScale:
    values: tuple

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        if len(values) < 2:
            raise ValueError("a rating scale needs at least two values")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"rating scale values must be strictly ascending: {values}")
        object.__setattr__(self, "values", values)

    @classmethod
    def range(cls, k):
        """The scale 1..k."""
        return cls(tuple(range(1, k + 1)))

    @property
    def K(self):
        return len(self.values)

    def axis(self, ratings):
        """0-based rating-axis positions of native rating values."""
        ratings = np.asarray(ratings)
        pos = np.searchsorted(self.values, ratings)
        pos = np.minimum(pos, self.K - 1)
        if len(ratings) and np.any(np.asarray(self.values)[pos] != ratings):
            bad = ratings[np.asarray(self.values)[pos] != ratings][0]
            raise DataError(f"rating {bad} is not on scale {self.values}")
        return pos


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    rating: int
    timestamp: int


def _first_appearance(keys):
    """Dense codes for ``keys`` numbered by first appearance, plus the id table."""
    keys = np.asarray(keys, dtype=str)
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64), ()
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    return rank[inv.ravel()], tuple(uniq[order].tolist())


@dataclass(frozen=True, eq=False)
class Dataset:
    """Interactions in row order with dense user/item indices.

    ``users``/``items`` hold dense codes, ``user_ids``/``item_ids`` map them
    back to external ids. ``ratings`` are native scale values.
    """

    user_ids: tuple
    item_ids: tuple
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    scale: RatingScale
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for name in ("users", "items", "ratings", "timestamps"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps) == n):
            raise ValueError("interaction columns differ in length")
        if n and (self.timestamps.min() < 0):
            raise DataError("timestamps must be non-negative")
        if n and not np.isin(self.ratings, self.scale.values).all():
            bad = self.ratings[~np.isin(self.ratings, self.scale.values)][0]
            raise DataError(f"rating {bad} is not on scale {self.scale.values}")

    @classmethod
    def from_columns(cls, users, items, ratings, timestamps, scale):
        """Build from external-id columns, numbering ids by first appearance."""
        u, user_ids = _first_appearance(users)
        i, item_ids = _first_appearance(items)
        return cls(user_ids, item_ids, u, i, ratings, timestamps, scale)

    @classmethod
    def from_interactions(cls, interactions, scale):
        rows = list(interactions)
        return cls.from_columns(
            [r.user for r in rows], [r.item for r in rows],
            np.array([r.rating for r in rows], dtype=np.int64),
            np.array([r.timestamp for r in rows], dtype=np.int64),
            scale,
        )

    def __len__(self):
        return len(self.users)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def user_index(self):
        if "user_index" not in self._cache:
            self._cache["user_index"] = {u: k for k, u in enumerate(self.user_ids)}
        return self._cache["user_index"]

    @property
    def item_index(self):
        if "item_index" not in self._cache:
            self._cache["item_index"] = {u: k for k, u in enumerate(self.item_ids)}
        return self._cache["item_index"]

    @property
    def external_users(self):
        return np.asarray(self.user_ids, dtype=object)[self.users] if len(self) else np.zeros(0, dtype=object)

    @property
    def external_items(self):
        return np.asarray(self.item_ids, dtype=object)[self.items] if len(self) else np.zeros(0, dtype=object)

    @property
    def interactions(self):
        return [
            Interaction(self.user_ids[u], self.item_ids[i], int(r), int(t))
            for u, i, r, t in zip(self.users, self.items, self.ratings, self.timestamps)
        ]

    def take(self, rows):
        """Sub-dataset of the given row positions (kept in the given order), re-indexed."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset.from_columns(
            self.external_users[rows], self.external_items[rows],
            self.ratings[rows], self.timestamps[rows], self.scale,
        )

    def with_ratings(self, ratings, scale):
        return Dataset(self.user_ids, self.item_ids, self.users, self.items, ratings, self.timestamps, scale)


# --- ingestion ---------------------------------------------------------------

FORMATS = ("movielens-dat", "csv")


def _parse_int(text, what, lineno):
    try:
        return int(text)
    except ValueError:
        raise DataError(f"line {lineno}: malformed {what} {text!r}") from None


def ingest(path, fmt, scale):
    """Read a ratings file into a ``Dataset``.

    ``movielens-dat`` lines look like ``user::item::rating::timestamp``; ``csv``
    files carry the header ``user,item,rating,timestamp``.
    """
    path = Path(path)
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    users, items, ratings, stamps = [], [], [], []
    allowed = set(scale.values)

    def add(lineno, fields):
        if len(fields) != 4 or not fields[0] or not fields[1]:
            raise DataError(f"line {lineno}: malformed row, expected 4 fields user,item,rating,timestamp")
        rating = _parse_int(fields[2], "rating", lineno)
        if rating not in allowed:
            raise DataError(f"line {lineno}: rating {rating} is off scale {scale.values}")
        stamp = _parse_int(fields[3], "timestamp", lineno)
        if stamp < 0:
            raise DataError(f"line {lineno}: negative timestamp {stamp}")
        users.append(fields[0])
        items.append(fields[1])
        ratings.append(rating)
        stamps.append(stamp)

    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "movielens-dat":
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if line:
                    add(lineno, line.split("::"))
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is not None and [h.strip() for h in header] != ["user", "item", "rating", "timestamp"]:
                raise DataError(f"line 1: expected header user,item,rating,timestamp, got {header}")
            for row in reader:
                if row:
                    add(reader.line_num, [f.strip() for f in row])

    return Dataset.from_columns(
        users, items, np.array(ratings, dtype=np.int64), np.array(stamps, dtype=np.int64), scale
    )


def write_csv(dataset, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "item", "rating", "timestamp"])
        for row in dataset.interactions:
            writer.writerow([row.user, row.item, row.rating, row.timestamp])


# --- splitting ---------------------------------------------------------------

def _chronological(timestamps):
    """Row order by timestamp; equal timestamps keep file order."""
    return np.argsort(timestamps, kind="stable")


def temporal_split(d, test_fraction):
    """Hold out the ``ceil(test_fraction * n)`` most recent interactions.

    Returns ``(train_part, test_part)``, each keeping the original row order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(d)
    # round first so that e.g. 0.7 * 10 does not become 8
    n_test = math.ceil(round(test_fraction * n, 9))
    order = _chronological(d.timestamps)
    test_rows = np.sort(order[n - n_test:])
    train_rows = np.sort(order[: n - n_test])
    return d.take(train_rows), d.take(test_rows)


def _latest_per_user(users, timestamps, rows):
    """Position (within ``rows``) of each user's latest interaction."""
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64)
    order = rows[_chronological(timestamps[rows])]
    # the last occurrence in chronological order wins
    rev = order[::-1]
    _, first = np.unique(users[rev], return_index=True)
    return np.sort(rev[first])


@dataclass(frozen=True, eq=False)
class SplitBundle:
    """Training data plus two leave-last-out holdouts.

    ``test_remainder`` holds every test-period interaction except the test
    holdout picks (validation picks included); ``validation_rows`` marks the
    validation picks inside it so they can be hidden during validation.
    """

    train: Dataset
    validation_holdout: tuple
    test_holdout: tuple
    test_remainder: Dataset
    validation_rows: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def holdout(self, stage):
        if stage == "validation":
            return self.validation_holdout
        if stage == "test":
            return self.test_holdout
        raise ValueError(f"unknown stage {stage!r}")

    def histories(self, stage):
        """Folding-in history per user: ``{user: (item_codes, rating_axis)}``.

        Items are train item codes (unknown items dropped) and ratings are
        rating-axis positions. A repeated item keeps its latest rating.
        """
        if stage in self._cache:
            return self._cache[stage]
        rem = self.test_remainder
        visible = np.ones(len(rem), dtype=bool)
        if stage == "validation":
            visible[self.validation_rows] = False
        elif stage != "test":
            raise ValueError(f"unknown stage {stage!r}")
        item_index = self.train.item_index
        rem_items = np.array([item_index.get(x, -1) for x in rem.item_ids], dtype=np.int64)

        users = np.concatenate([self.train.external_users, rem.external_users[visible]]).astype(str)
        items = np.concatenate([self.train.items, rem_items[rem.items[visible]] if len(rem) else np.zeros(0, np.int64)])
        ratings = np.concatenate([self.train.ratings, rem.ratings[visible]])
        stamps = np.concatenate([self.train.timestamps, rem.timestamps[visible]])
        known = items >= 0
        users, items, ratings, stamps = users[known], items[known], ratings[known], stamps[known]
        axis = self.train.scale.axis(ratings)

        out = {}
        if len(users):
            order = np.lexsort((np.arange(len(users)), stamps))[::-1]  # newest first
            users, items, axis = users[order], items[order], axis[order]
            pair_keys = np.char.add(np.char.add(users, "\x00"), items.astype(str))
            _, first = np.unique(pair_keys, return_index=True)
            keep = np.sort(first)
            users, items, axis = users[keep], items[keep], axis[keep]
            by_user = np.argsort(users, kind="stable")
            users, items, axis = users[by_user], items[by_user], axis[by_user]
            bounds = np.flatnonzero(users[1:] != users[:-1]) + 1
            starts = np.concatenate([[0], bounds])
            stops = np.concatenate([bounds, [len(users)]])
            for a, b in zip(starts, stops):
                out[str(users[a])] = (items[a:b], axis[a:b])
        self._cache[stage] = out
        return out


def leave_last_out(test_part, train_part):
    """Double leave-last-out holdouts from the test period.

    Each user's latest test interaction goes to the test holdout; from what
    remains, each user's latest goes to the validation holdout. Holdout
    entries whose item never occurs in ``train_part`` are dropped.
    """
    if len(test_part) == 0:
        raise DataError("test part is empty; nothing to hold out")
    all_rows = np.arange(len(test_part))
    test_pick = _latest_per_user(test_part.users, test_part.timestamps, all_rows)
    rest = np.setdiff1d(all_rows, test_pick)
    remainder = test_part.take(rest)
    val_pick = _latest_per_user(remainder.users, remainder.timestamps, np.arange(len(remainder)))

    known_items = train_part.item_index

    def entries(dataset, rows):
        out = []
        for r in rows:
            item = dataset.item_ids[dataset.items[r]]
            if item in known_items:
                user = dataset.user_ids[dataset.users[r]]
                out.append((user, Interaction(user, item, int(dataset.ratings[r]), int(dataset.timestamps[r]))))
        return tuple(out)

    val_rows = np.asarray(val_pick, dtype=np.int64)
    val_rows.setflags(write=False)
    return SplitBundle(
        train=train_part,
        validation_holdout=entries(remainder, val_pick),
        test_holdout=entries(test_part, test_pick),
        test_remainder=remainder,
        validation_rows=val_rows,
    )


def split(d, test_fraction=0.2):
    train_part, test_part = temporal_split(d, test_fraction)
    return leave_last_out(test_part, train_part)


# --- rating scale --------------------------------------------------------------

def transform_scale(d, target_k):
    """Coarsen a K-value scale into ``target_k`` equal contiguous groups.

    The i-th group (ascending) becomes rating ``i + 1``. K must be divisible
    by ``target_k``.
    """
    k = d.scale.K
    if target_k < 2 or k % target_k:
        raise DataError(
            f"cannot split {k} rating values into {target_k} equal groups; "
            "provide a custom grouping (map ratings yourself before ingestion)"
        )
    width = k // target_k
    mapped = d.scale.axis(d.ratings) // width + 1
    return d.with_ratings(mapped, RatingScale.range(target_k))


# --- tensor ------------------------------------------------------------------

def build_tensor(train):
    """Binary user x item x rating tensor; repeated pairs keep the latest rating."""
    dims = (train.n_users, train.n_items, train.scale.K)
    if len(train) == 0:
        return SparseTensor3(dims, np.zeros((0, 3), dtype=np.int64))
    axis = train.scale.axis(train.ratings)
    order = np.lexsort((np.arange(len(train)), train.timestamps))[::-1]  # newest first
    pairs = train.users[order] * train.n_items + train.items[order]
    _, first = np.unique(pairs, return_index=True)
    rows = np.sort(order[first])
    coords = np.column_stack([train.users[rows], train.items[rows], axis[rows]])
    return SparseTensor3(dims, coords)


# --- synthetic data --------------------------------------------------------------

def generate_shifted_population(n_users, n_items, shift, seed, per_user=40, latent_dim=8, noise=0.5,
                                exposure_noise=1.5):
    """Two cohorts with identical tastes but different rating habits.

    Base users draw latent tastes, pick items they tend to like and rate them
    on 1..5 by thresholding a noisy affinity. Cohort A emits the base ratings;
    cohort B consists of the same users (same items, same base ratings) whose
    emitted ratings are shifted up by ``shift`` and clipped to 5. Events are
    interleaved in a random order with strictly increasing timestamps.
    """
    if shift not in (0, 1, 2):
        raise ValueError(f"shift must be 0, 1 or 2, got {shift}")
    if n_users % 2 or n_users < 2:
        raise ValueError(f"n_users must be a positive even number, got {n_users}")
    rng = np.random.default_rng(seed)
    half = n_users // 2
    per_user = min(per_user, n_items)

    tastes = rng.standard_normal((half, latent_dim))
    traits = rng.standard_normal((n_items, latent_dim))
    quality = rng.normal(0.0, 0.5, n_items)
    affinity = tastes @ traits.T / np.sqrt(latent_dim) + quality

    # users mostly pick items they like (Gumbel top-k on scaled affinity)
    keys = affinity + rng.gumbel(size=affinity.shape) * exposure_noise
    picked = np.argsort(-keys, axis=1)[:, :per_user]
    scores = np.take_along_axis(affinity, picked, axis=1) + rng.normal(0.0, noise, picked.shape)
    # cut points chosen so the base ratings look like a typical 5-star histogram
    cuts = np.quantile(scores, [0.06, 0.17, 0.43, 0.77])
    base = 1 + np.searchsorted(cuts, scores)

    users = np.concatenate([
        np.repeat([f"a{u}" for u in range(half)], per_user),
        np.repeat([f"b{u}" for u in range(half)], per_user),
    ])
    items = np.concatenate([picked.ravel(), picked.ravel()]).astype(str)
    ratings = np.concatenate([base.ravel(), np.minimum(base.ravel() + shift, 5)])

    order = rng.permutation(len(users))
    stamps = np.arange(1, len(users) + 1, dtype=np.int64)
    return Dataset.from_columns(
        users[order], items[order], ratings[order], stamps, RatingScale.range(5)
    )
