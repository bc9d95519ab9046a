"""Labeled feature datasets: assembly, stratified split, z-scoring, snapshots."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .feature_ids import FEATURE_IDS, HRV_FEATURES, feature_index, validate_subset
from .rr_io import Label, Sex, rng_from_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Standardization:
    """Per-feature (mean, population std) from the training side."""

    features: tuple
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.std + self.mean

    def subset(self, features) -> "Standardization":
        features = tuple(features)
        if features == self.features:
            return self
        missing = [f for f in features if f not in self.features]
        if missing:
            raise ValueError(f"no standardization statistics for {missing}")
        pos = [self.features.index(f) for f in features]
        return Standardization(features, self.mean[pos], self.std[pos])

    def to_dict(self) -> dict:
        return {f: [float(m), float(s)] for f, m, s in zip(self.features, self.mean, self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        feats = tuple(d)
        return cls(feats, np.array([d[f][0] for f in feats], dtype=np.float64),
                   np.array([d[f][1] for f in feats], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Rows of ``(subject_id, feature vector, label)``.

    ``values`` is an ``(n, 18)`` matrix in :data:`FEATURE_IDS` column order,
    NaN where a feature is undefined. ``feature_subset`` names the columns
    exposed to a model; every exposed value is defined. When
    ``standardization`` is set (it may cover more features than are exposed),
    :attr:`X` returns z-scores.
    """

    subject_ids: tuple
    values: np.ndarray
    labels: tuple
    feature_subset: tuple = FEATURE_IDS
    standardization: Standardization | None = None

    def __post_init__(self):
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise ValueError("duplicate subject_id in dataset")
        if self.values.shape != (len(self.subject_ids), len(FEATURE_IDS)):
            raise ValueError("values must have shape (n_rows, 18)")
        if len(self.labels) != len(self.subject_ids):
            raise ValueError("one label per row required")
        cols = self.columns
        if np.any(np.isnan(self.values[:, cols])):
            raise ValueError("exposed features must be defined in every row")
        if self.standardization is not None:
            self.standardization.subset(self.feature_subset)

    def __len__(self) -> int:
        return len(self.subject_ids)

    @property
    def columns(self) -> list[int]:
        return [feature_index(f) for f in self.feature_subset]

    @property
    def raw(self) -> np.ndarray:
        return self.values[:, self.columns]

    @property
    def X(self) -> np.ndarray:
        x = self.raw
        if self.standardization is not None:
            x = self.standardization.subset(self.feature_subset).transform(x)
        return x

    @property
    def y(self) -> np.ndarray:
        """1 for IHD, 0 for Normal."""
        return np.array([lab is Label.IHD for lab in self.labels], dtype=np.int64)

    def feature_vector(self, i: int) -> dict:
        return {f: (None if math.isnan(v) else float(v)) for f, v in zip(FEATURE_IDS, self.values[i])}

    def take(self, idx) -> "LabeledDataset":
        idx = list(idx)
        return replace(self, subject_ids=tuple(self.subject_ids[i] for i in idx),
                       values=self.values[idx], labels=tuple(self.labels[i] for i in idx))

    def select(self, subset) -> "LabeledDataset":
        """Expose ``subset``, dropping rows where any exposed value is undefined."""
        subset = validate_subset(subset)
        cols = [feature_index(f) for f in subset]
        keep = ~np.any(np.isnan(self.values[:, cols]), axis=1)
        dropped = [s for s, k in zip(self.subject_ids, keep) if not k]
        if dropped:
            log.info("excluding %d subject(s) with undefined features in %s: %s",
                     len(dropped), subset, ", ".join(dropped))
        return replace(self.take(np.flatnonzero(keep)), feature_subset=subset)


def assemble(subjects, hrv: dict, feature_subset=FEATURE_IDS) -> LabeledDataset:
    """Join subject metadata with 24 h HRV aggregates (``{subject_id: {feature: value}}``)."""
    feature_subset = validate_subset(feature_subset)
    ids, rows, labels = [], [], []
    seen = set()
    for s in subjects:
        if s.subject_id in seen:
            raise ValueError(f"duplicate subject_id {s.subject_id!r}")
        seen.add(s.subject_id)
        if s.subject_id not in hrv:
            raise ValueError(f"subject {s.subject_id!r} has no HRV aggregates")
        agg = hrv[s.subject_id]
        row = [np.nan if agg.get(f) is None else float(agg[f]) for f in HRV_FEATURES]
        row += [float(s.age_years), 1.0 if s.sex is Sex.M else 0.0, float(s.lvef_percent)]
        ids.append(s.subject_id)
        rows.append(row)
        labels.append(s.label)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(FEATURE_IDS))
    full = LabeledDataset(tuple(ids), values, tuple(labels), feature_subset=())
    return full.select(feature_subset)


@dataclass(frozen=True, eq=False)
class SplitDataset:
    train: LabeledDataset
    validation: LabeledDataset
    seed: int
    train_frac: float = 0.75
    stratified: bool = True

    @property
    def standardization(self) -> Standardization | None:
        """Statistics narrowed to the exposed features."""
        st = self.train.standardization
        return None if st is None else st.subset(self.train.feature_subset)

    def select(self, subset) -> "SplitDataset":
        """Re-expose both sides on ``subset``, keeping stored statistics for those features."""
        return replace(self, train=self.train.select(subset), validation=self.validation.select(subset))


def _train_count(n: int, frac: float) -> int:
    # half-up rounding, kept away from empty sides
    return min(n - 1, max(1, math.floor(frac * n + 0.5)))


def split(ds: LabeledDataset, train_frac: float = 0.75, seed: int = 0,
          stratified: bool = True) -> SplitDataset:
    """Random train/validation split, per class when ``stratified``."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    rng = rng_from_seed(seed)
    labels = np.array([lab is Label.IHD for lab in ds.labels])
    counts = {lab: int(np.count_nonzero(labels == (lab is Label.IHD))) for lab in Label}
    for lab, c in counts.items():
        if c < 2:
            raise ValueError(f"class {lab.value} has {c} subject(s); need at least 2")
    train_idx, val_idx = [], []
    groups = [np.flatnonzero(labels), np.flatnonzero(~labels)] if stratified else [np.arange(len(ds))]
    for g in groups:
        perm = g[rng.permutation(g.size)]
        k = _train_count(g.size, train_frac)
        train_idx.extend(perm[:k].tolist())
        val_idx.extend(perm[k:].tolist())
    train_idx.sort()
    val_idx.sort()
    return SplitDataset(ds.take(train_idx), ds.take(val_idx), seed, train_frac, stratified)


def standardize(sd: SplitDataset, features=None) -> SplitDataset:
    """Z-score exposed features with training-side statistics.

    ``features`` widens the set of columns that get statistics (for later
    :meth:`SplitDataset.select`); undefined values are ignored when computing
    them.
    """
    features = validate_subset(features if features is not None else sd.train.feature_subset)
    uncovered = set(sd.train.feature_subset) - set(features)
    if uncovered:
        raise ValueError(f"exposed features without statistics: {sorted(uncovered)}")
    if len(sd.train) == 0:
        raise ValueError("training side is empty")
    cols = [feature_index(f) for f in features]
    vals = sd.train.values[:, cols]
    mean = np.nanmean(vals, axis=0)
    std = np.nanstd(vals, axis=0)
    bad = [f for f, s in zip(features, std) if not s > 0]
    if bad:
        raise ValueError(f"zero-variance feature(s) on the training side: {bad}")
    st = Standardization(features, mean, std)
    return replace(sd, train=replace(sd.train, standardization=st),
                   validation=replace(sd.validation, standardization=st))


def dataset_from_cohort(subjects, vectors, feature_subset=FEATURE_IDS) -> LabeledDataset:
    return assemble(subjects, {s.subject_id: v for s, v in zip(subjects, vectors)}, feature_subset)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def format_dataset_csv(sd: SplitDataset) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("subject_id", "label", "side") + FEATURE_IDS)
    for side, ds in (("train", sd.train), ("validation", sd.validation)):
        for i, sid in enumerate(ds.subject_ids):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in ds.values[i]]
            w.writerow([sid, ds.labels[i].value, side] + cells)
    return buf.getvalue().encode("utf-8")


def split_manifest(sd: SplitDataset) -> dict:
    st = sd.train.standardization
    return {
        "seed": sd.seed,
        "train_frac": sd.train_frac,
        "stratified": sd.stratified,
        "feature_subset": list(sd.train.feature_subset),
        "train": list(sd.train.subject_ids),
        "validation": list(sd.validation.subject_ids),
        "standardization": None if st is None else st.to_dict(),
    }


def format_split_manifest(sd: SplitDataset) -> bytes:
    return (json.dumps(split_manifest(sd), indent=2) + "\n").encode("utf-8")


def class_counts(ds: LabeledDataset) -> dict:
    return {lab.value: sum(1 for x in ds.labels if x is lab) for lab in Label}

