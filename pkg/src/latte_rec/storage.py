"""Versioned binary files for datasets, split bundles and trained models.

Layout: 8-byte magic ``LATTEREC``, little-endian ``uint16`` format version,
``uint32`` length of a UTF-8 JSON header, the header, then an ``.npz``
archive holding every array (loaded with ``allow_pickle=False``).
"""
import io
import json
import struct

import numpy as np

from .data import Dataset, Interaction, RatingScale, SplitBundle
from .linalg import TuckerFactors
from .models import ModelConfig, TrainedModel
from .similarity import DependencyLaw, SimilarityMatrix

MAGIC = b"LATTEREC"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<HI")


class FormatError(ValueError):
    pass


def _write(path, meta, arrays):
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEAD.pack(FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(buf.getvalue())


def _read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a latte-rec file (bad magic)")
    version, size = _HEAD.unpack_from(blob, len(MAGIC))
    if version > FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version} is newer than supported {FORMAT_VERSION}")
    start = len(MAGIC) + _HEAD.size
    meta = json.loads(blob[start:start + size].decode("utf-8"))
    with np.load(io.BytesIO(blob[start + size:]), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    return meta, arrays


def file_type(path):
    """Payload type (``dataset``, ``split`` or ``model``) of a file, or None if it is not ours."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + _HEAD.size)
        if head[: len(MAGIC)] != MAGIC or len(head) < len(MAGIC) + _HEAD.size:
            return None
        _, size = _HEAD.unpack_from(head, len(MAGIC))
        return json.loads(fh.read(size).decode("utf-8")).get("type")


def _dataset_arrays(d, prefix):
    return {
        f"{prefix}user_ids": np.asarray(d.user_ids, dtype=str),
        f"{prefix}item_ids": np.asarray(d.item_ids, dtype=str),
        f"{prefix}users": d.users,
        f"{prefix}items": d.items,
        f"{prefix}ratings": d.ratings,
        f"{prefix}timestamps": d.timestamps,
    }


def _dataset_from(arrays, prefix, scale):
    return Dataset(
        tuple(arrays[f"{prefix}user_ids"].tolist()),
        tuple(arrays[f"{prefix}item_ids"].tolist()),
        arrays[f"{prefix}users"], arrays[f"{prefix}items"],
        arrays[f"{prefix}ratings"], arrays[f"{prefix}timestamps"], scale,
    )


def _holdout_arrays(entries, prefix):
    return {
        f"{prefix}users": np.asarray([u for u, _ in entries], dtype=str),
        f"{prefix}items": np.asarray([h.item for _, h in entries], dtype=str),
        f"{prefix}ratings": np.asarray([h.rating for _, h in entries], dtype=np.int64),
        f"{prefix}timestamps": np.asarray([h.timestamp for _, h in entries], dtype=np.int64),
    }


def _holdout_from(arrays, prefix):
    cols = [arrays[f"{prefix}{c}"].tolist() for c in ("users", "items", "ratings", "timestamps")]
    return tuple((u, Interaction(u, i, int(r), int(t))) for u, i, r, t in zip(*cols))


def _config_meta(c):
    return {
        "kind": c.kind, "rank": c.rank, "ranks": list(c.ranks) if c.ranks else None,
        "normalization_factor": c.normalization_factor, "law": c.law.kind if c.law else None,
        "l2": c.l2, "seed": c.seed, "max_iters": c.max_iters, "tol": c.tol,
    }


def _config_from(meta):
    meta = dict(meta)
    if meta.get("ranks") is not None:
        meta["ranks"] = tuple(meta["ranks"])
    return ModelConfig(**meta)


def save(obj, path):
    if isinstance(obj, Dataset):
        _write(path, {"type": "dataset", "scale": list(obj.scale.values)}, _dataset_arrays(obj, ""))
    elif isinstance(obj, SplitBundle):
        arrays = {**_dataset_arrays(obj.train, "train/"), **_dataset_arrays(obj.test_remainder, "rem/"),
                  **_holdout_arrays(obj.validation_holdout, "val/"), **_holdout_arrays(obj.test_holdout, "test/"),
                  "validation_rows": obj.validation_rows}
        _write(path, {"type": "split", "scale": list(obj.train.scale.values)}, arrays)
    elif isinstance(obj, TrainedModel):
        meta = {"type": "model", "config": _config_meta(obj.config), "n_items": obj.n_items,
                "n_ratings": obj.n_ratings, "rating_values": list(obj.rating_values)}
        arrays = {}
        for name in ("item_scaling", "item_factors", "rating_factors", "popularity", "weights"):
            value = getattr(obj, name)
            if value is not None:
                arrays[name] = np.asarray(value)
        if obj.tucker is not None:
            t = obj.tucker
            arrays.update({"tucker/core": t.core, "tucker/u": t.u, "tucker/v": t.v, "tucker/w": t.w,
                           "tucker/history": np.asarray(t.history, dtype=float)})
            meta["tucker"] = {"fit": float(t.fit), "iterations": int(t.iterations)}
        if obj.similarity is not None:
            s = obj.similarity
            arrays.update({"sim/entries": s.entries, "sim/sqrt": s.sqrt, "sim/inv_sqrt": s.inv_sqrt})
            meta["similarity"] = {"law": s.law.kind, "eigen_floor": s.eigen_floor}
        _write(path, meta, arrays)
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def load(path, expect=None):
    meta, arrays = _read(path)
    kind = meta.get("type")
    if expect is not None and kind != expect:
        raise FormatError(f"{path}: expected a {expect} file, found {kind}")
    if kind == "dataset":
        return _dataset_from(arrays, "", RatingScale(meta["scale"]))
    if kind == "split":
        scale = RatingScale(meta["scale"])
        rows = arrays["validation_rows"].astype(np.int64)
        rows.setflags(write=False)
        return SplitBundle(
            train=_dataset_from(arrays, "train/", scale),
            validation_holdout=_holdout_from(arrays, "val/"),
            test_holdout=_holdout_from(arrays, "test/"),
            test_remainder=_dataset_from(arrays, "rem/", scale),
            validation_rows=rows,
        )
    if kind == "model":
        extra = {}
        for name in ("item_scaling", "item_factors", "rating_factors", "popularity", "weights"):
            if name in arrays:
                extra[name] = arrays[name]
        if "tucker" in meta:
            extra["tucker"] = TuckerFactors(
                arrays["tucker/core"], arrays["tucker/u"], arrays["tucker/v"], arrays["tucker/w"],
                fit=meta["tucker"]["fit"], history=tuple(arrays["tucker/history"].tolist()),
                iterations=meta["tucker"]["iterations"],
            )
        if "similarity" in meta:
            extra["similarity"] = SimilarityMatrix(
                DependencyLaw(meta["similarity"]["law"]), arrays["sim/entries"], arrays["sim/sqrt"],
                arrays["sim/inv_sqrt"], meta["similarity"]["eigen_floor"],
            )
        return TrainedModel(
            config=_config_from(meta["config"]), n_items=meta["n_items"], n_ratings=meta["n_ratings"],
            rating_values=tuple(meta["rating_values"]), **extra,
        )
    raise FormatError(f"{path}: unknown payload type {kind!r}")
