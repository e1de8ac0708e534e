"""Exhaustive grid search selecting models by a validation metric."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import logging

import numpy as np

from .data import build_tensor
from .evaluation import evaluate_contexts
from .models import CONTEXTS, TENSOR_KINDS, ContextAggregation, ModelConfig, ModelError, train
from .similarity import law as as_law

log = logging.getLogger(__name__)

TARGETS = {"mcc": "mcc", "hr_pos": "hr_pos", "hr": "hr_pos"}


def _steps(lo, hi, step):
    count = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + i * step, 10) for i in range(count))


def default_rank_grid():
    return tuple(sorted(m * 2 ** i for i in range(5, 9) for m in (2, 3)))


@dataclass(frozen=True)
class GridSpec:
    normalization_factors: tuple = field(default_factory=lambda: _steps(0.0, 2.0, 0.1))
    rank_grid: tuple = field(default_factory=default_rank_grid)
    rating_ranks: tuple = (2, 3, 4, 5)
    l2_grid: tuple = field(default_factory=lambda: _steps(50.0, 950.0, 50.0))
    laws: tuple = ("linear", "sigmoid", "arctan", "cube_root")
    contexts: tuple = CONTEXTS

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(as_law(x).kind for x in self.laws))
        for name in self.contexts:
            ContextAggregation.named(name)

    def points(self, kind, norm_factor=1.0, seed=0):
        """``(config, contexts)`` pairs in grid order for one model kind."""
        if kind in ("random", "most_popular"):
            return [(ModelConfig(kind, seed=seed), (None,))]
        if kind == "pure_svd":
            return [
                (ModelConfig(kind, rank=r, normalization_factor=f, seed=seed), (None,))
                for f, r in itertools.product(self.normalization_factors, self.rank_grid)
            ]
        if kind == "ease":
            return [(ModelConfig(kind, l2=l2, seed=seed), (None,)) for l2 in self.l2_grid]
        if kind == "coffee":
            return [
                (ModelConfig(kind, ranks=(r, r, r3), normalization_factor=norm_factor, seed=seed), self.contexts)
                for r, r3 in itertools.product(self.rank_grid, self.rating_ranks)
            ]
        if kind == "latte":
            return [
                (ModelConfig(kind, ranks=(r, r, r3), normalization_factor=norm_factor, law=lw, seed=seed),
                 self.contexts)
                for lw, r, r3 in itertools.product(self.laws, self.rank_grid, self.rating_ranks)
            ]
        raise ModelError(f"unknown model kind {kind!r}")

    @classmethod
    def from_mapping(cls, section, base=None):
        """Grid from an INI ``[grid]`` section; unset keys keep ``base`` values."""
        base = base or cls()
        kw = {}
        keys = {
            "norm_factors": ("normalization_factors", float),
            "ranks": ("rank_grid", int),
            "rating_ranks": ("rating_ranks", int),
            "l2": ("l2_grid", float),
            "laws": ("laws", str),
            "contexts": ("contexts", str),
        }
        for key, raw in section.items():
            if key not in keys:
                raise ValueError(f"unknown grid key {key!r}; expected one of {', '.join(keys)}")
            attr, cast = keys[key]
            kw[attr] = parse_values(raw, cast)
        return cls(**{**base.__dict__, **kw})


def parse_values(raw, cast):
    """Comma list (``1,2,3``) or inclusive range ``start:stop:step``."""
    raw = raw.strip()
    if ":" in raw and cast is not str:
        lo, hi, step = (float(x) for x in raw.split(":"))
        return tuple(cast(x) for x in _steps(lo, hi, step))
    return tuple(cast(x.strip()) for x in raw.split(",") if x.strip())


@dataclass(frozen=True)
class TraceEntry:
    config: ModelConfig
    context: str
    metric: float
    report: object = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class TuneResult:
    best_config: ModelConfig
    best_context: str
    best_metric: float
    trace: tuple
    failures: tuple = ()


def tune(kind, grid, bundle, target="mcc", norm_factor=1.0, n=10, threshold=3, seed=0,
         stage="validation", workers=1, **config_overrides):
    """Train every grid point for ``kind`` and pick the best by ``target``.

    Every context is scored from one trained model. Ties go to the smaller
    model, then to the earlier grid point. Tensor models use ``norm_factor``
    as given (the caller passes PureSVD's best).
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; expected one of {', '.join(TARGETS)}")
    metric_name = TARGETS[target]
    points = grid.points(kind, norm_factor=norm_factor, seed=seed)
    if config_overrides:
        points = [(ModelConfig(**{**cfg.__dict__, **config_overrides}), ctxs) for cfg, ctxs in points]
    if not points:
        raise ValueError(f"grid is empty for {kind}")
    tensor = build_tensor(bundle.train)
    k = bundle.train.scale.K

    def run(point):
        cfg, ctx_names = point
        try:
            model = train(cfg, bundle.train, tensor)
        except (ModelError, ValueError, ArithmeticError) as exc:
            return cfg, exc
        contexts = [ContextAggregation.named(c or "only5", k) for c in ctx_names]
        reports = evaluate_contexts(model, bundle, contexts, n, threshold, stage)
        return cfg, [(c, reports[(c or "only5")]) for c in ctx_names]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, points))
    else:
        outcomes = [run(p) for p in points]

    trace, failures = [], []
    for cfg, outcome in outcomes:
        if isinstance(outcome, Exception):
            failures.append((cfg, str(outcome)))
            log.warning("grid point %s failed: %s", cfg.describe(), outcome)
            continue
        for ctx, report in outcome:
            trace.append(TraceEntry(cfg, ctx, getattr(report, metric_name), report))
    if not trace:
        causes = "; ".join(f"{cfg.describe()}: {msg}" for cfg, msg in failures)
        raise ModelError(f"every {kind} grid point failed to train: {causes}")

    best_i = min(range(len(trace)), key=lambda i: (-trace[i].metric, trace[i].config.size, i))
    best = trace[best_i]
    return TuneResult(best.config, best.context, best.metric, tuple(trace), tuple(failures))


def tune_with_inheritance(kind, grid, bundle, target="mcc", n=10, threshold=3, seed=0, workers=1):
    """Tune ``kind``; tensor models first tune PureSVD to inherit its normalization factor."""
    if kind in TENSOR_KINDS:
        if len(grid.normalization_factors) == 1:
            factor = grid.normalization_factors[0]
        else:
            factor = tune("pure_svd", grid, bundle, target, n=n, threshold=threshold, seed=seed,
                          workers=workers).best_config.normalization_factor
        return tune(kind, grid, bundle, target, norm_factor=factor, n=n, threshold=threshold, seed=seed,
                    workers=workers)
    return tune(kind, grid, bundle, target, n=n, threshold=threshold, seed=seed, workers=workers)


def median(values):
    return float(np.median(np.asarray(values, dtype=float)))
