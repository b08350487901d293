"""Micro/macro precision, recall and ROC AUC for multi-label predictions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError, DimensionError, UndefinedMetricError

METRIC_KEYS = (
    "micro_precision",
    "macro_precision",
    "micro_recall",
    "macro_recall",
    "micro_roc_auc",
    "macro_roc_auc",
)


@dataclass
class PredictionSet:
    scores: np.ndarray  # R x N_Y probabilities
    targets: np.ndarray  # R x N_Y bits
    threshold: float = 0.5

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.int64))
        if self.scores.shape != self.targets.shape:
            raise DimensionError(f"scores {self.scores.shape} and targets {self.targets.shape} differ in shape")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise DataError("scores must lie in [0, 1]")
        if not np.isin(self.targets, (0, 1)).all():
            raise DataError("targets must be 0 or 1")
        if not 0.0 < self.threshold < 1.0:
            raise DataError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass
class LabelCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class MetricsReport:
    micro_precision: float
    macro_precision: float
    micro_recall: float
    macro_recall: float
    micro_roc_auc: Optional[float]
    macro_roc_auc: Optional[float]
    per_label: list[LabelCounts] = field(default_factory=list)
    per_label_auc: list[Optional[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        """The six headline metrics as a flat mapping; undefined AUCs are ``None``."""
        return {k: getattr(self, k) for k in METRIC_KEYS}


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def confusion_counts(pred: PredictionSet) -> list[LabelCounts]:
    hard = pred.scores >= pred.threshold
    truth = pred.targets.astype(bool)
    return [
        LabelCounts(
            tp=int(np.sum(hard[:, j] & truth[:, j])),
            fp=int(np.sum(hard[:, j] & ~truth[:, j])),
            fn=int(np.sum(~hard[:, j] & truth[:, j])),
            tn=int(np.sum(~hard[:, j] & ~truth[:, j])),
        )
        for j in range(pred.scores.shape[1])
    ]


def precision_recall(pred: PredictionSet) -> tuple[float, float, float, float]:
    """(micro P, macro P, micro R, macro R).

    A score counts as a positive prediction when it is >= the threshold.
    Zero denominators give 0, and such labels still count in macro means.
    """
    if pred.scores.shape[0] == 0:
        raise DataError("no records to score")
    counts = confusion_counts(pred)
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    macro_p = float(np.mean([_ratio(c.tp, c.tp + c.fp) for c in counts]))
    macro_r = float(np.mean([_ratio(c.tp, c.tp + c.fn) for c in counts]))
    return _ratio(tp, tp + fp), macro_p, _ratio(tp, tp + fn), macro_r


def roc_auc(scores, targets) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2).

    Computed from the Mann-Whitney rank statistic with average ranks.
    Raises :class:`UndefinedMetricError` when targets hold a single class.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    targets = np.asarray(targets).ravel().astype(bool)
    if scores.shape != targets.shape:
        raise DimensionError(f"{scores.size} scores for {targets.size} targets")
    n_pos = int(targets.sum())
    n_neg = targets.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative target")
    ranks = rankdata(scores)  # average ranks for ties
    # twice the U statistic is an integer, so this is exact for moderate sizes
    u2 = 2.0 * ranks[targets].sum() - n_pos * (n_pos + 1)
    return float(u2 / (2.0 * n_pos * n_neg))


def _auc_or_none(scores, targets) -> Optional[float]:
    try:
        return roc_auc(scores, targets)
    except UndefinedMetricError:
        return None


def report(pred: PredictionSet) -> MetricsReport:
    micro_p, macro_p, micro_r, macro_r = precision_recall(pred)
    per_auc = [_auc_or_none(pred.scores[:, j], pred.targets[:, j]) for j in range(pred.scores.shape[1])]
    defined = [a for a in per_auc if a is not None]
    return MetricsReport(
        micro_precision=micro_p,
        macro_precision=macro_p,
        micro_recall=micro_r,
        macro_recall=macro_r,
        micro_roc_auc=_auc_or_none(pred.scores, pred.targets),
        macro_roc_auc=float(np.mean(defined)) if defined else None,
        per_label=confusion_counts(pred),
        per_label_auc=per_auc,
    )
