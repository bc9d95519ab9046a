"""Grid search over input subsets and hidden-layer sizes, ranked by validation AUC.

Each configuration is identified by its ordinal in the enumeration. Its
training seed is derived from ``(master seed, ordinal, replicate)`` through
``numpy.random.SeedSequence``, so results do not depend on execution order.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import SplitDataset
from .evaluation import evaluate
from .feature_ids import HRV_FEATURES, validate_subset
from .mlp import MLPModel, TrainConfig, TrainingDiverged, init_model, train
from .rr_io import rng_from_seed

log = logging.getLogger(__name__)

MANDATORY_DEFAULT = ("lvef", "sex", "age")
REPORT_HEADER = ("rank", "features", "n_hidden", "seed", "train_acc", "val_acc", "val_auc",
                 "converged", "epochs", "error")


@dataclass(frozen=True)
class RandomSample:
    n: int
    seed: int = 0


@dataclass(frozen=True)
class SearchSpec:
    mandatory_features: tuple = MANDATORY_DEFAULT
    candidate_features: tuple = HRV_FEATURES
    hidden_range: tuple = (2, 10)
    input_range: tuple = (4, 18)
    strategy: RandomSample | None = None        # None means exhaustive
    seeds_per_config: int = 1
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        mand = validate_subset(self.mandatory_features)
        cand = validate_subset(self.candidate_features)
        object.__setattr__(self, "mandatory_features", mand)
        object.__setattr__(self, "candidate_features", cand)
        if set(mand) & set(cand):
            raise ValueError("mandatory and candidate features overlap")
        lo, hi = self.hidden_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad hidden_range {self.hidden_range}")
        lo, hi = self.input_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad input_range {self.input_range}")
        if self.seeds_per_config < 1:
            raise ValueError("seeds_per_config must be >= 1")
        if self.strategy is not None and self.strategy.n < 1:
            raise ValueError("random sample size must be >= 1")

    def subset_sizes(self) -> range:
        m = len(self.mandatory_features)
        lo = max(0, self.input_range[0] - m)
        hi = min(len(self.candidate_features), self.input_range[1] - m)
        return range(lo, hi + 1)

    def hidden_sizes(self) -> range:
        return range(self.hidden_range[0], self.hidden_range[1] + 1)

    def to_dict(self) -> dict:
        return {
            "mandatory_features": list(self.mandatory_features),
            "candidate_features": list(self.candidate_features),
            "hidden_range": list(self.hidden_range),
            "input_range": list(self.input_range),
            "strategy": ("exhaustive" if self.strategy is None
                         else {"random_sample": self.strategy.n, "seed": self.strategy.seed}),
            "seeds_per_config": self.seeds_per_config,
            "train_config": asdict(self.train_config),
        }


def count_configs(spec: SearchSpec) -> int:
    """Size of the exhaustive space: sum of C(|candidates|, s) over sizes, times hidden sizes."""
    n = len(spec.candidate_features)
    subsets = sum(math.comb(n, s) for s in spec.subset_sizes() if s >= 0)
    if len(spec.mandatory_features) == 0:
        subsets -= 1 if 0 in spec.subset_sizes() else 0      # no empty network
    return subsets * len(spec.hidden_sizes())


def _exhaustive(spec: SearchSpec):
    mand = spec.mandatory_features
    for size in spec.subset_sizes():
        for combo in itertools.combinations(spec.candidate_features, size):
            inputs = mand + combo
            if not inputs:
                continue
            for h in spec.hidden_sizes():
                yield inputs, h


def enumerate_configs(spec: SearchSpec):
    """Yield ``(feature_subset, n_hidden)`` in deterministic order.

    Exhaustive order: subset size ascending, then combination order of the
    candidate list, then hidden size ascending. A random sample keeps that
    order among the drawn configurations.
    """
    total = count_configs(spec)
    if total == 0:
        raise ValueError("search space is empty")
    if spec.strategy is None:
        yield from _exhaustive(spec)
        return
    k = min(spec.strategy.n, total)
    picks = set(rng_from_seed(spec.strategy.seed).choice(total, size=k, replace=False).tolist())
    for i, cfg in enumerate(_exhaustive(spec)):
        if i in picks:
            yield cfg


def derive_seed(master: int, ordinal: int, replicate: int) -> int:
    return int(np.random.SeedSequence([master, ordinal, replicate]).generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class SearchEntry:
    ordinal: int
    feature_subset: tuple
    n_hidden: int
    seed: int
    train_acc: float | None = None
    val_acc: float | None = None
    train_auc: float | None = None
    val_auc: float | None = None
    converged: bool | None = None
    epochs: int | None = None
    final_sse: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def rank_key(self):
        # strict total order: auc desc, then smaller nets, then seed, then ordinal
        auc = -1.0 if self.val_auc is None else self.val_auc
        return (-auc, len(self.feature_subset), self.n_hidden, self.seed, self.ordinal)


@dataclass(frozen=True, eq=False)
class SearchResult:
    ranked: list
    best: SearchEntry | None
    best_model: MLPModel | None
    provenance: dict

    @property
    def n_failed(self) -> int:
        return sum(e.failed for e in self.ranked)


def _run_one(split: SplitDataset, cfg: TrainConfig, ordinal: int, subset, n_hidden: int, seed: int):
    sub = split.select(subset)
    base = SearchEntry(ordinal, tuple(subset), n_hidden, seed)
    try:
        init = init_model(len(subset), n_hidden, subset, seed, cfg.init_scale)
        out = train(init, sub.train.X, sub.train.y, cfg)
        model = out.model.with_standardization(sub.standardization)  # narrowed to subset
        ev_tr, ev_va = evaluate(model, sub.train), evaluate(model, sub.validation)
    except (TrainingDiverged, ValueError, FloatingPointError) as e:
        return SearchEntry(**{**asdict(base), "error": str(e)}), None
    entry = SearchEntry(ordinal, tuple(subset), n_hidden, seed,
                        train_acc=ev_tr.metrics.acc, val_acc=ev_va.metrics.acc,
                        train_auc=ev_tr.roc.auc, val_auc=ev_va.roc.auc,
                        converged=out.converged, epochs=out.epochs_run, final_sse=out.final_sse)
    return entry, model


def _run_chunk(args):
    split, cfg, items = args
    return [_run_one(split, cfg, *it) for it in items]


def run_search(spec: SearchSpec, split: SplitDataset, jobs: int = 1,
               manifest_ref: dict | None = None) -> SearchResult:
    """Train every configuration on the training side and rank by validation AUC.

    Failed trainings become entries with ``error`` set and sort last.
    """
    cfg = spec.train_config
    items = []
    for ordinal, (subset, h) in enumerate(enumerate_configs(spec)):
        for r in range(spec.seeds_per_config):
            items.append((ordinal, subset, h, derive_seed(cfg.seed, ordinal, r)))

    results = []
    if jobs > 1 and len(items) > 1:
        n_chunks = min(len(items), jobs * 4)
        chunks = [items[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_run_chunk, [(split, cfg, c) for c in chunks]):
                results.extend(part)
    else:
        results = [_run_one(split, cfg, *it) for it in items]

    best_entry, best_model = None, None
    for entry, model in results:
        if model is not None and (best_entry is None or entry.rank_key() < best_entry.rank_key()):
            best_entry, best_model = entry, model
    ranked = sorted((e for e, _ in results), key=SearchEntry.rank_key)
    n_configs = len(items) // spec.seeds_per_config
    provenance = {
        "spec": spec.to_dict(),
        "configs_evaluated": n_configs,
        "trainings": len(items),
        "exhaustive_space": count_configs(spec),
        "failed": sum(e.failed for e in ranked),
        "selection": "highest validation AUC (model selected on the validation set; "
                     "no independent test set)",
        "dataset": manifest_ref or {},
    }
    log.info("search finished: %d trainings, %d failed", len(items), provenance["failed"])
    return SearchResult(ranked, best_entry, best_model, provenance)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_search_csv(result: SearchResult) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for rank, e in enumerate(result.ranked, start=1):
        w.writerow([rank, ";".join(e.feature_subset), e.n_hidden, e.seed, _cell(e.train_acc),
                    _cell(e.val_acc), _cell(e.val_auc), _cell(e.converged), _cell(e.epochs),
                    _cell(e.error)])
    return buf.getvalue().encode("utf-8")


def report_search(result: SearchResult, best_model_file: str) -> tuple[bytes, bytes]:
    """Ranked CSV plus a JSON manifest pointing at the saved best model."""
    if not result.ranked:
        raise ValueError("empty search result")
    best = result.best
    manifest = {
        "best": None if best is None else {
            "features": list(best.feature_subset), "n_hidden": best.n_hidden, "seed": best.seed,
            "val_auc": best.val_auc, "val_acc": best.val_acc, "train_acc": best.train_acc,
            "train_auc": best.train_auc, "model_file": best_model_file,
        },
        "provenance": result.provenance,
    }
    return format_search_csv(result), (json.dumps(manifest, indent=2) + "\n").encode("utf-8")

