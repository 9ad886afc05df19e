from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from sklearn.metrics import confusion_matrix, roc_auc_score

from .errors import EvaluationError

MEASURES = ("auc", "recall", "brier", "pf", "f1")
# Measures where a lower value is better
LOWER_IS_BETTER = frozenset({"brier", "pf"})


@dataclass(frozen=True)
class MetricReport:
    '''
    The five measures for one set of predictions plus the confusion counts.

    `degenerate` lists the measures whose denominator was zero; those are
    reported as 0 (auc as nan).
    '''
    auc: float
    recall: float
    brier: float
    pf: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    degenerate: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def measure(self, name: str) -> float:
        if name not in MEASURES:
            raise EvaluationError(f"unknown measure '{name}'")
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        if math.isnan(self.auc):
            d["auc"] = None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricReport:
        return cls(
            auc=math.nan if d["auc"] is None else float(d["auc"]),
            recall=float(d["recall"]),
            brier=float(d["brier"]),
            pf=float(d["pf"]),
            f1=float(d["f1"]),
            tp=int(d["tp"]),
            fp=int(d["fp"]),
            tn=int(d["tn"]),
            fn=int(d["fn"]),
            degenerate=tuple(d.get("degenerate", ())),
        )


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise EvaluationError(f"{scores.size} scores for {labels.size} labels")
    if scores.size == 0:
        raise EvaluationError("no predictions to evaluate")
    if not np.all(np.isin(labels, (0, 1))):
        raise EvaluationError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auc(scores, labels) -> float:
    '''
    Area under the ROC curve: the chance that a random defective file scores
    higher than a random clean one, ties counting one half.
    '''
    scores, labels = _check_pair(scores, labels)
    if np.unique(labels).size < 2:
        raise EvaluationError("AUC needs both classes in the labels")
    return float(roc_auc_score(labels, scores))


def brier(probs, labels) -> float:
    """Mean squared difference between defect probability and outcome."""
    probs, labels = _check_pair(probs, labels)
    if np.any((probs < 0) | (probs > 1)):
        raise EvaluationError("probabilities must lie in [0, 1]")
    return float(np.mean((probs - labels) ** 2))


def confusion_and_threshold_metrics(probs, labels, threshold: float = 0.5) -> MetricReport:
    '''
    Full metric report for defect probabilities.

    A file is predicted defective when its probability is >= threshold.
    Zero denominators give 0 and add the measure name to `degenerate`.
    '''
    probs, labels = _check_pair(probs, labels)
    predicted = (probs >= threshold).astype(np.int64)
    tn, fp, fn, tp = (int(x) for x in confusion_matrix(labels, predicted, labels=[0, 1]).ravel())
    flags: list[str] = []

    if np.unique(labels).size == 2:
        auc_value = auc(probs, labels)
    else:
        auc_value = math.nan
        flags.append("auc")

    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")

    if tn + fp > 0:
        pf = fp / (tn + fp)
    else:
        pf = 0.0
        flags.append("pf")

    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    if tp + fp == 0 or precision + recall == 0:
        f1 = 0.0
        flags.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)

    return MetricReport(
        auc=auc_value,
        recall=recall,
        brier=brier(probs, labels),
        pf=pf,
        f1=f1,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        degenerate=tuple(flags),
    )
