"""Confusion matrices, ACC/SEN/SPE/PRE, ROC curves and AUC (IHD is positive)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .mlp import MLPModel, predict_batch
from .rr_io import Label


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    acc: float | None
    sen: float | None
    spe: float | None
    pre: float | None

    def as_percent(self) -> dict:
        return {k: (None if v is None else round(100.0 * v, 1))
                for k, v in (("acc", self.acc), ("sen", self.sen), ("spe", self.spe), ("pre", self.pre))}


@dataclass(frozen=True, eq=False)
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    confusion: ConfusionMatrix
    metrics: MetricsReport
    roc: ROCCurve
    n: int

    def to_dict(self) -> dict:
        cm = self.confusion
        m = self.metrics
        return {
            "n": self.n,
            "confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
            "metrics": {"acc": m.acc, "sen": m.sen, "spe": m.spe, "pre": m.pre},
            "metrics_percent": m.as_percent(),
            "auc": self.roc.auc,
        }


def _is_ihd(labels) -> np.ndarray:
    return np.array([v is Label.IHD or v is True or v == 1 for v in labels], dtype=bool)


def confusion(labels, predicted) -> ConfusionMatrix:
    labels, predicted = list(labels), list(predicted)
    if len(labels) != len(predicted):
        raise ValueError("labels and predictions differ in length")
    if not labels:
        raise ValueError("confusion matrix of empty input")
    t, p = _is_ihd(labels), _is_ihd(predicted)
    return ConfusionMatrix(tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)),
                           fn=int(np.sum(t & ~p)), tn=int(np.sum(~t & ~p)))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("metrics of an empty confusion matrix")
    return MetricsReport(
        acc=(cm.tp + cm.tn) / cm.total,
        sen=_ratio(cm.tp, cm.tp + cm.fn),
        spe=_ratio(cm.tn, cm.tn + cm.fp),
        pre=_ratio(cm.tp, cm.tp + cm.fp),
    )


def roc(labels, scores) -> ROCCurve:
    """Threshold sweep over distinct scores, predicting IHD when ``score >= threshold``.

    Tied scores collapse into one point. The area is accumulated in integer
    counts and divided once, so it equals the Mann-Whitney statistic exactly.
    """
    pos = _is_ihd(labels)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != pos.shape:
        raise ValueError("labels and scores differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], pos[order]
    # last index of each block of equal scores
    last = np.flatnonzero(np.append(np.diff(s_sorted) != 0, True))
    tps = np.cumsum(pos_sorted)[last]
    fps = (last + 1) - tps
    tps = np.concatenate(([0], tps))
    fps = np.concatenate(([0], fps))

    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return ROCCurve(fps / n_neg, tps / n_pos, auc)


def evaluate(model: MLPModel, dataset: LabeledDataset) -> EvaluationReport:
    """Confusion, metrics and ROC for ``model`` on ``dataset``.

    Raw datasets are z-scored with the model's stored statistics; datasets
    that already carry statistics are used as they are.
    """
    if tuple(dataset.feature_subset) != tuple(model.feature_subset):
        if not set(model.feature_subset) <= set(dataset.feature_subset):
            raise ValueError(f"dataset does not expose the model inputs {model.feature_subset}")
        dataset = dataset.select(model.feature_subset)
    X = dataset.X
    if dataset.standardization is None and model.standardization is not None:
        X = model.standardization.transform(X)
    is_ihd, score = predict_batch(model, X)
    cm = confusion(dataset.y, is_ihd)
    return EvaluationReport(cm, metrics(cm), roc(dataset.y, score), len(dataset))


def format_roc_csv(curve: ROCCurve) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("fpr", "tpr"))
    for f, t in curve.points:
        w.writerow((repr(f), repr(t)))
    return buf.getvalue().encode("utf-8")


def format_evaluation_json(report: EvaluationReport) -> bytes:
    return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")
