"""Binary-classification evaluation: confusion counts, rates, ROC, AUC.

Class 1 (vulnerable) is the positive class everywhere. Ratios with a zero
denominator are reported as 0.0 and named in the report's `degenerate`
list rather than raising, so sweeps over weak models still produce
complete tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Mapping, Sequence

from .records import PredictionRecord

SCHEMA_VERSION = 1

UNPARSEABLE_POLICIES = ("exclude", "as_safe")

# column order of the technique-by-metric comparison table
TABLE_COLUMNS = (
    "technique",
    "accuracy",
    "precision_0",
    "recall_0",
    "f1_0",
    "precision_1",
    "recall_1",
    "f1_1",
    "f1_avg",
    "auc",
    "unparseable",
    "run_id",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with class 1 as positive."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    """Count tp/fp/tn/fn over aligned prediction and label sequences."""
    if len(predictions) == 0:
        raise ValueError("cannot build a confusion matrix from empty inputs")
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    tp = fp = tn = fn = 0
    for pred, true in zip(predictions, labels):
        if pred not in (0, 1) or true not in (0, 1):
            raise ValueError(f"labels must be binary, got prediction {pred!r} / label {true!r}")
        if true == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RateSet:
    """Accuracy plus per-class and macro-averaged rates."""

    accuracy: float
    precision_0: float
    recall_0: float
    f1_0: float
    precision_1: float
    recall_1: float
    f1_1: float
    f1_macro: float
    degenerate: tuple[str, ...]  # rates whose denominator was zero


def _ratio(numerator: int, denominator: int, name: str, degenerate: list[str]) -> float:
    if denominator == 0:
        degenerate.append(name)
        return 0.0
    return numerator / denominator


def metrics(cm: ConfusionMatrix) -> RateSet:
    """Derive every rate from one confusion matrix."""
    degenerate: list[str] = []
    accuracy = _ratio(cm.tp + cm.tn, cm.total, "accuracy", degenerate)
    precision_1 = _ratio(cm.tp, cm.tp + cm.fp, "precision_1", degenerate)
    recall_1 = _ratio(cm.tp, cm.tp + cm.fn, "recall_1", degenerate)
    precision_0 = _ratio(cm.tn, cm.tn + cm.fn, "precision_0", degenerate)
    recall_0 = _ratio(cm.tn, cm.tn + cm.fp, "recall_0", degenerate)
    f1_1 = f1_score(precision_1, recall_1)
    f1_0 = f1_score(precision_0, recall_0)
    return RateSet(
        accuracy=accuracy,
        precision_0=precision_0,
        recall_0=recall_0,
        f1_0=f1_0,
        precision_1=precision_1,
        recall_1=recall_1,
        f1_1=f1_1,
        f1_macro=(f1_0 + f1_1) / 2.0,
        degenerate=tuple(degenerate),
    )


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over descending score thresholds.

    The curve starts at (0, 0) with an infinite threshold and ends at
    (1, 1); tied scores collapse into a single point.
    """

    thresholds: tuple[float, ...]
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]


def roc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Build the ROC curve of scores against binary labels."""
    if len(scores) == 0:
        raise ValueError("cannot build a ROC curve from empty inputs")
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    for s in scores:
        if not math.isfinite(s):
            raise ValueError(f"scores must be finite, got {s!r}")
    positives = sum(1 for lbl in labels if lbl == 1)
    negatives = sum(1 for lbl in labels if lbl == 0)
    if positives + negatives != len(labels):
        raise ValueError("labels must be binary")
    if positives == 0 or negatives == 0:
        raise ValueError("ROC needs both classes present")

    pairs = sorted(zip(scores, labels), key=lambda p: -p[0])
    thresholds = [math.inf]
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    while i < len(pairs):
        threshold = pairs[i][0]
        # consume the whole tie group so equal scores yield one point
        while i < len(pairs) and pairs[i][0] == threshold:
            if pairs[i][1] == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        thresholds.append(threshold)
        fpr.append(fp / negatives)
        tpr.append(tp / positives)
    return RocCurve(thresholds=tuple(thresholds), fpr=tuple(fpr), tpr=tuple(tpr))


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under a ROC curve."""
    area = 0.0
    for i in range(1, len(curve.fpr)):
        area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0
    return area


@dataclass
class EvalReport:
    """Everything one run's evaluation produced, JSON round-trippable."""

    accuracy: float
    precision_0: float
    recall_0: float
    f1_0: float
    precision_1: float
    recall_1: float
    f1_1: float
    f1_macro: float
    auc: float | None
    counts: ConfusionMatrix
    n_scored: int  # records that entered the confusion matrix
    unparseable: int
    degenerate: tuple[str, ...]
    run_id: str | None = None
    dataset_fingerprint: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        d = asdict(self)
        d["counts"] = self.counts.to_dict()
        d["degenerate"] = list(self.degenerate)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {d.get('schema_version')!r}")
        d["counts"] = ConfusionMatrix(**d["counts"])
        d["degenerate"] = tuple(d["degenerate"])
        return cls(**d)


def evaluate_predictions(
    records: Sequence[PredictionRecord],
    labels: Mapping[str, int],
    unparseable_policy: str = "exclude",
    run_id: str | None = None,
    dataset_fingerprint: str | None = None,
) -> EvalReport:
    """Score prediction records against true labels.

    Unparseable records (label None) follow the policy: "exclude" counts
    them separately and keeps them out of every rate (the default), while
    "as_safe" scores them as predicted-safe. AUC appears only when every
    scored record carries a score and both classes occur in the truth.
    """
    if unparseable_policy not in UNPARSEABLE_POLICIES:
        raise ValueError(f"unknown unparseable policy {unparseable_policy!r}, expected {UNPARSEABLE_POLICIES}")
    if len(records) == 0:
        raise ValueError("cannot evaluate zero records")
    seen: set[str] = set()
    for record in records:
        if record.sample_id in seen:
            raise ValueError(f"duplicate prediction for sample {record.sample_id!r}")
        seen.add(record.sample_id)
        if record.sample_id not in labels:
            raise ValueError(f"no true label for sample {record.sample_id!r}")

    unparseable = sum(1 for r in records if r.label is None)
    scored: list[tuple[PredictionRecord, int]] = []
    for record in records:
        prediction = record.label
        if prediction is None:
            if unparseable_policy == "exclude":
                continue
            prediction = 0  # fallback: treat undecipherable output as a safe call
        scored.append((record, prediction))

    if scored:
        cm = confusion([p for _, p in scored], [labels[r.sample_id] for r, _ in scored])
    else:
        cm = ConfusionMatrix(0, 0, 0, 0)
    rates = metrics(cm)

    auc_value = None
    truths = [labels[r.sample_id] for r, _ in scored]
    if scored and all(r.score is not None for r, _ in scored) and len(set(truths)) == 2:
        auc_value = auc(roc([r.score for r, _ in scored], truths))

    return EvalReport(
        accuracy=rates.accuracy,
        precision_0=rates.precision_0,
        recall_0=rates.recall_0,
        f1_0=rates.f1_0,
        precision_1=rates.precision_1,
        recall_1=rates.recall_1,
        f1_1=rates.f1_1,
        f1_macro=rates.f1_macro,
        auc=auc_value,
        counts=cm,
        n_scored=len(scored),
        unparseable=unparseable,
        degenerate=rates.degenerate,
        run_id=run_id,
        dataset_fingerprint=dataset_fingerprint,
    )


def table_row(report: EvalReport, technique: str) -> dict[str, str]:
    """One comparison-table row: fixed columns, 3-decimal rates."""

    def fmt(value: float | None) -> str:
        return "" if value is None else f"{value:.3f}"

    return {
        "technique": technique,
        "accuracy": fmt(report.accuracy),
        "precision_0": fmt(report.precision_0),
        "recall_0": fmt(report.recall_0),
        "f1_0": fmt(report.f1_0),
        "precision_1": fmt(report.precision_1),
        "recall_1": fmt(report.recall_1),
        "f1_1": fmt(report.f1_1),
        "f1_avg": fmt(report.f1_macro),
        "auc": fmt(report.auc),
        "unparseable": str(report.unparseable),
        "run_id": report.run_id or "",
    }
