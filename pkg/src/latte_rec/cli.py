"""Command-line entry point: ``latte-rec <subcommand> [options]``.

Subcommands: ingest, split, train, evaluate, tune, run, compare. Options can
also come from an INI file (``--config``); flags on the command line win.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import configparser
from dataclasses import dataclass, field
import hashlib
import json
import logging
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__, storage
from .data import FORMATS, RatingScale, build_tensor, generate_shifted_population, ingest, leave_last_out, \
    temporal_split, transform_scale
from .evaluation import evaluate, format_table
from .models import CONTEXTS, MODEL_KINDS, TENSOR_KINDS, ContextAggregation, ModelConfig, train
from .similarity import LAW_NAMES
from .tuning import GridSpec, tune, tune_with_inheritance

log = logging.getLogger("latte_rec")

LAW_CHOICES = tuple(n.replace("_", "-") for n in LAW_NAMES)

# option name -> (INI section, key, type, default)
_OPTIONS = {
    "input": ("data", "input", str, None),
    "format": ("data", "format", str, "auto"),
    "native_k": ("data", "native_k", int, 5),
    "scale_k": ("data", "scale_k", int, 5),
    "test_frac": ("data", "test_frac", float, 0.2),
    "synthetic": ("data", "synthetic", str, None),
    "model": ("model", "model", str, None),
    "law": ("model", "law", str, None),
    "context": ("model", "context", str, "only5"),
    "ranks": ("model", "ranks", str, "32,32,3"),
    "norm_factor": ("model", "norm_factor", float, 1.0),
    "l2": ("model", "l2", float, 500.0),
    "max_iters": ("model", "max_iters", int, 25),
    "tol": ("model", "tol", float, 1e-4),
    "topn": ("eval", "topn", int, 10),
    "threshold": ("eval", "threshold", int, 3),
    "target": ("eval", "target", str, "mcc"),
    "seed": ("run", "seed", int, 0),
    "out": ("run", "out", str, None),
    "threads": ("run", "threads", int, None),
}


class StageError(RuntimeError):
    pass


@dataclass
class RunConfig:
    input: str = None
    format: str = "auto"
    native_k: int = 5
    scale_k: int = 5
    test_frac: float = 0.2
    synthetic: str = None
    models: list = field(default_factory=lambda: ["latte"])
    law: str = None
    context: str = "only5"
    ranks: tuple = (32, 32, 3)
    norm_factor: float = 1.0
    l2: float = 500.0
    max_iters: int = 25
    tol: float = 1e-4
    topn: int = 10
    threshold: int = 3
    target: str = "mcc"
    seed: int = 0
    out: str = None
    tune: bool = False
    grid: GridSpec = None

    def model_config(self, kind):
        kind = kind.replace("-", "_")
        kw = dict(seed=self.seed, max_iters=self.max_iters, tol=self.tol)
        if kind == "pure_svd":
            return ModelConfig(kind, rank=self.ranks[0], normalization_factor=self.norm_factor, **kw)
        if kind == "ease":
            return ModelConfig(kind, l2=self.l2, **kw)
        if kind in TENSOR_KINDS:
            law = self.law if kind == "latte" else None
            return ModelConfig(kind, ranks=self.ranks, normalization_factor=self.norm_factor, law=law, **kw)
        return ModelConfig(kind, **kw)


class RunLog:
    """JSON-lines stage log; one record per pipeline stage."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.write_text("")

    def stage(self, name, started, **details):
        record = {"stage": name, "seconds": round(time.perf_counter() - started, 6), **details}
        self.records.append(record)
        log.info("%s done in %.2fs", name, record["seconds"])
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def split_hash(bundle):
    h = hashlib.sha256()
    for d in (bundle.train, bundle.test_remainder):
        h.update("\x1f".join(d.user_ids).encode())
        h.update("\x1f".join(d.item_ids).encode())
        for arr in (d.users, d.items, d.ratings, d.timestamps):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    for entries in (bundle.validation_holdout, bundle.test_holdout):
        for user, row in entries:
            h.update(f"{user}\x1f{row.item}\x1f{row.rating}\x1f{row.timestamp}\x1e".encode())
    return h.hexdigest()


def _parse_synthetic(text):
    params = {"users": 1000, "items": 200, "shift": 1, "seed": 0}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition("=")
        if key not in params:
            raise ValueError(f"unknown synthetic parameter {key!r}; expected {', '.join(params)}")
        params[key] = int(value)
    return params


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"{name}: {exc}") from exc


def load_dataset(cfg):
    if cfg.synthetic:
        p = _parse_synthetic(cfg.synthetic)
        return generate_shifted_population(p["users"], p["items"], p["shift"], p["seed"])
    if not cfg.input:
        raise ValueError("no dataset given (use --input or --synthetic)")
    fmt = cfg.format
    path = Path(cfg.input)
    if fmt == "auto":
        if storage.file_type(path) is not None:
            return storage.load(path, expect="dataset")
        fmt = "movielens-dat" if path.suffix == ".dat" else "csv"
    return ingest(path, fmt, RatingScale.range(cfg.native_k))


def prepare_split(cfg, runlog):
    t0 = time.perf_counter()
    d = _stage("ingest", load_dataset, cfg)
    runlog.stage("ingest", t0, interactions=len(d), users=d.n_users, items=d.n_items)
    if d.scale.K != cfg.scale_k:
        t0 = time.perf_counter()
        d = _stage("transform_scale", transform_scale, d, cfg.scale_k)
        runlog.stage("transform_scale", t0, k=cfg.scale_k)
    t0 = time.perf_counter()
    train_part, test_part = _stage("temporal_split", temporal_split, d, cfg.test_frac)
    runlog.stage("temporal_split", t0, train=len(train_part), test=len(test_part))
    t0 = time.perf_counter()
    bundle = _stage("leave_last_out", leave_last_out, test_part, train_part)
    runlog.stage("leave_last_out", t0, validation=len(bundle.validation_holdout),
                 test=len(bundle.test_holdout), split_hash=split_hash(bundle))
    return bundle


def _grid_for(cfg, kind):
    grid = cfg.grid or GridSpec()
    if kind == "latte" and cfg.law:
        # an explicit law pins the law axis of the grid
        grid = GridSpec(**{**grid.__dict__, "laws": (cfg.law,)})
    return grid


def fit_model(cfg, kind, bundle, runlog, tensor=None):
    """Train one model (tuned on validation when ``cfg.tune``); returns (model, context)."""
    k = bundle.train.scale.K
    t0 = time.perf_counter()
    if cfg.tune:
        result = _stage("tune", tune_with_inheritance, kind, _grid_for(cfg, kind), bundle, cfg.target, n=cfg.topn,
                        threshold=cfg.threshold, seed=cfg.seed)
        config = ModelConfig(**{**result.best_config.__dict__, "max_iters": cfg.max_iters, "tol": cfg.tol})
        context = result.best_context or cfg.context
        runlog.stage("tune", t0, model=kind, best=config.describe(), context=context,
                     validation_metric=result.best_metric, grid_points=len(result.trace))
        t0 = time.perf_counter()
    else:
        config = _stage("train", cfg.model_config, kind)
        context = cfg.context
    if tensor is None:
        tensor = build_tensor(bundle.train)
    model = _stage("train", train, config, bundle.train, tensor)
    details = {"model": kind, "config": config.describe()}
    if model.tucker is not None:
        details.update(fit=model.tucker.fit, iterations=model.tucker.iterations)
    runlog.stage("train", t0, **details)
    return model, ContextAggregation.named(context, k)


def run_pipeline(cfg):
    """ingest -> transform_scale -> split -> train (or tune) -> evaluate, for every model."""
    out = Path(cfg.out) if cfg.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    runlog = RunLog(out / "run_log.jsonl" if out else None)
    bundle = prepare_split(cfg, runlog)
    if out:
        storage.save(bundle, out / "split.lrb")
    tensor = build_tensor(bundle.train)
    reports = {}
    for kind in cfg.models:
        model, ctx = fit_model(cfg, kind, bundle, runlog, tensor)
        t0 = time.perf_counter()
        label = kind if not model.is_tensor else f"{kind}[{ctx.name}]"
        report = _stage("evaluate", evaluate, model, bundle, ctx, cfg.topn, cfg.threshold, "test")
        runlog.stage("evaluate", t0, model=kind, context=ctx.name, split_hash=split_hash(bundle),
                     **report.as_dict())
        reports[label] = report
        if out:
            storage.save(model, out / f"model-{kind}.lrm")
            if model.similarity is not None:
                (out / f"similarity-{model.similarity.law.cli_name}.csv").write_text(model.similarity.to_csv())
    if out:
        (out / "report.txt").write_text(format_table(reports))
        (out / "metrics.csv").write_text(metrics_csv(reports))
    return reports


def metrics_csv(reports):
    if len(reports) == 1:
        return next(iter(reports.values())).to_csv()
    names = list(reports)
    lines = ["metric," + ",".join(names)]
    first = reports[names[0]]
    for m in first.METRICS:
        lines.append(m + "," + ",".join(f"{getattr(reports[n], m):.10g}" for n in names))
    for key in ("tp", "fp", "tn", "fn"):
        lines.append(key + "," + ",".join(str(getattr(reports[n].counts, key)) for n in names))
    return "\n".join(lines) + "\n"


# --- argument handling ----------------------------------------------------------

def _ranks(text):
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ranks must be comma-separated integers, got {text!r}") from None
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected r1,r2,r3 with positive entries, got {text!r}")
    return parts


def build_parser():
    parser = argparse.ArgumentParser(prog="latte-rec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, model=False, evaluation=False):
        p.add_argument("--config", help="INI file with [data]/[model]/[eval]/[run]/[grid] sections")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--threads", type=int, help="worker thread cap (also LATTE_REC_THREADS)")
        p.add_argument("-v", "--verbose", action="store_true")
        if data:
            p.add_argument("--input", help="ratings file (.dat/.csv) or a saved dataset/split")
            p.add_argument("--format", choices=FORMATS + ("auto",))
            p.add_argument("--synthetic", metavar="users=N,items=N,shift=S,seed=S",
                           help="use the shifted-population generator instead of --input")
            p.add_argument("--native-k", type=int, dest="native_k", help="native scale size (values 1..K)")
            p.add_argument("--scale-k", type=int, dest="scale_k", help="target rating scale size")
            p.add_argument("--test-frac", type=float, dest="test_frac")
        if model:
            shown = [k.replace("_", "-") for k in MODEL_KINDS]
            p.add_argument("--model", action="append", choices=sorted(set(shown) | set(MODEL_KINDS)),
                           metavar="{" + ",".join(shown) + "}", help="repeat to compare several models")
            p.add_argument("--law", choices=LAW_CHOICES)
            p.add_argument("--context", choices=CONTEXTS)
            p.add_argument("--ranks", type=_ranks, help="r1,r2,r3 (pure-svd uses r1)")
            p.add_argument("--norm-factor", type=float, dest="norm_factor")
            p.add_argument("--l2", type=float)
            p.add_argument("--max-iters", type=int, dest="max_iters")
            p.add_argument("--tol", type=float)
        if evaluation:
            p.add_argument("--topn", type=int)
            p.add_argument("--threshold", type=int)
            p.add_argument("--target", choices=("mcc", "hr_pos"))

    common(sub.add_parser("ingest", help="parse a ratings file into a dataset file"))
    common(sub.add_parser("split", help="temporal split + double leave-last-out"))
    p = sub.add_parser("train", help="train one model on a split")
    common(p, model=True)
    p = sub.add_parser("evaluate", help="evaluate a saved model on a split")
    common(p, model=True, evaluation=True)
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--stage", choices=("validation", "test"), default="test")
    p = sub.add_parser("tune", help="grid search on the validation holdout")
    common(p, model=True, evaluation=True)
    p = sub.add_parser("run", help="full pipeline for one model")
    common(p, model=True, evaluation=True)
    p.add_argument("--tune", action="store_true", help="tune on validation before testing")
    p = sub.add_parser("compare", help="full pipeline for several models on one split")
    common(p, model=True, evaluation=True)
    p.add_argument("--tune", action="store_true", help="tune on validation before testing")
    return parser


def resolve(args):
    """Merge INI values under command-line flags into a ``RunConfig``."""
    ini = configparser.ConfigParser()
    if getattr(args, "config", None):
        if not ini.read(args.config):
            raise FileNotFoundError(f"config file {args.config} not found")
    values = {}
    for name, (section, key, cast, default) in _OPTIONS.items():
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
        elif ini.has_option(section, key):
            values[name] = cast(ini.get(section, key))
        else:
            values[name] = default
    models = values.pop("model")
    if isinstance(models, str):
        models = [m.strip() for m in models.split(",") if m.strip()]
    threads = values.pop("threads")
    if threads:
        import os
        os.environ["LATTE_REC_THREADS"] = str(threads)
    ranks = values["ranks"]
    values["ranks"] = _ranks(ranks) if isinstance(ranks, str) else tuple(ranks)
    if values["law"] is not None and values["law"] not in LAW_CHOICES + LAW_NAMES:
        raise argparse.ArgumentTypeError(f"invalid law {values['law']!r}")
    grid = GridSpec.from_mapping(dict(ini["grid"])) if ini.has_section("grid") else None
    cfg = RunConfig(**values, models=[m.replace("-", "_") for m in (models or ["latte"])],
                    tune=getattr(args, "tune", False), grid=grid)
    return cfg


def _cmd_ingest(cfg):
    d = load_dataset(cfg)
    if d.scale.K != cfg.scale_k:
        d = transform_scale(d, cfg.scale_k)
    if cfg.out:
        storage.save(d, cfg.out)
    print(f"{len(d)} interactions, {d.n_users} users, {d.n_items} items, K={d.scale.K}")


def _load_bundle(cfg):
    if cfg.input and not cfg.synthetic and storage.file_type(cfg.input) == "split":
        return storage.load(cfg.input, expect="split")
    return prepare_split(cfg, RunLog())


def _cmd_split(cfg):
    bundle = prepare_split(cfg, RunLog())
    if cfg.out:
        storage.save(bundle, cfg.out)
    print(f"train={len(bundle.train)} validation={len(bundle.validation_holdout)} "
          f"test={len(bundle.test_holdout)} hash={split_hash(bundle)[:16]}")


def _cmd_train(cfg):
    bundle = _load_bundle(cfg)
    model, _ = fit_model(cfg, cfg.models[0], bundle, RunLog())
    if cfg.out:
        storage.save(model, cfg.out)
    if model.tucker is not None:
        print(f"{model.config.describe()} fit={model.tucker.fit:.6f} iterations={model.tucker.iterations}")
    else:
        print(model.config.describe())


def _cmd_evaluate(cfg, args):
    bundle = _load_bundle(cfg)
    model = storage.load(args.model_file, expect="model")
    ctx = ContextAggregation.named(cfg.context, model.n_ratings)
    report = evaluate(model, bundle, ctx, cfg.topn, cfg.threshold, args.stage)
    print(report.to_table(model.config.kind), end="")
    if cfg.out:
        Path(cfg.out).write_text(report.to_csv())


def _cmd_tune(cfg):
    bundle = _load_bundle(cfg)
    kind = cfg.models[0]
    result = tune(kind, _grid_for(cfg, kind), bundle, cfg.target, norm_factor=cfg.norm_factor, n=cfg.topn,
                  threshold=cfg.threshold, seed=cfg.seed)
    lines = ["config,context,value"]
    lines += [f"{e.config.describe()},{e.context or ''},{e.metric:.10g}" for e in result.trace]
    if cfg.out:
        Path(cfg.out).write_text("\n".join(lines) + "\n")
    print(f"best: {result.best_config.describe()} context={result.best_context} "
          f"{cfg.target}={result.best_metric:.6f} ({len(result.trace)} grid entries)")


def _cmd_run(cfg):
    reports = run_pipeline(cfg)
    print(format_table(reports), end="")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve(args)
    except (argparse.ArgumentTypeError, ValueError, KeyError, FileNotFoundError) as exc:
        parser.error(str(exc))
    try:
        if args.command == "ingest":
            _cmd_ingest(cfg)
        elif args.command == "split":
            _cmd_split(cfg)
        elif args.command == "train":
            _cmd_train(cfg)
        elif args.command == "evaluate":
            _cmd_evaluate(cfg, args)
        elif args.command == "tune":
            _cmd_tune(cfg)
        else:
            _cmd_run(cfg)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"latte-rec: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
