"""Confusion-matrix metrics (malicious = positive), rank AUC and reports."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, SingleClass

_POSITIVE = {1, True, "malicious"}


def _positive(v) -> bool:
    if isinstance(v, (np.integer, np.bool_)):
        v = v.item()
    return v in _POSITIVE


@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0 or self.total < 1:
            raise ValueError("confusion counts must be non-negative with a positive total")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall_tpr: float
    fpr: float
    f1: float
    confusion: Confusion
    roc_auc: Optional[float] = None
    degenerate: Tuple[str, ...] = ()

    @property
    def recall(self) -> float:
        return self.recall_tpr

    @property
    def tpr(self) -> float:
        return self.recall_tpr

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def confusion(labels: Sequence, verdicts: Sequence) -> Confusion:
    if len(labels) != len(verdicts):
        raise LengthMismatch(f"{len(labels)} labels vs {len(verdicts)} verdicts")
    if not len(labels):
        raise LengthMismatch("need at least one labelled verdict")
    tp = tn = fp = fn = 0
    for truth, pred in zip(labels, verdicts):
        t, p = _positive(truth), _positive(pred)
        if t and p:
            tp += 1
        elif t:
            fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    return Confusion(tp, tn, fp, fn)


def _ratio(num: int, den: int, name: str, flags: List[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(c: Confusion, roc_auc: Optional[float] = None) -> MetricsReport:
    flags: List[str] = []
    accuracy = (c.tp + c.tn) / c.total
    recall = _ratio(c.tp, c.tp + c.fn, "recall_tpr", flags)
    fpr = _ratio(c.fp, c.fp + c.tn, "fpr", flags)
    precision = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    if precision + recall == 0:
        flags.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(accuracy, precision, recall, fpr, f1, c, roc_auc, tuple(flags))


def roc_auc(scores: Sequence[float], labels: Sequence) -> float:
    """P(random positive outscores random negative), ties counted one half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.array([_positive(v) for v in labels], dtype=bool)
    if s.shape != pos.shape:
        raise LengthMismatch("scores and labels differ in length")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes")
    ranks = rankdata(s)  # average ranks resolve ties as 1/2
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(labels: Sequence, scores: Sequence[float], threshold: float = 0.5) -> MetricsReport:
    verdicts = [float(s) >= threshold for s in scores]
    report = metrics(confusion(labels, verdicts))
    try:
        report.roc_auc = roc_auc(scores, labels)
    except SingleClass:
        report.degenerate = report.degenerate + ("roc_auc",)
    return report


COLUMNS = ("Accuracy", "F1", "Recall", "Precision", "ROC-AUC", "FPR", "TPR")


def _row_values(r: MetricsReport) -> List[Optional[float]]:
    return [r.accuracy, r.f1, r.recall_tpr, r.precision, r.roc_auc, r.fpr, r.recall_tpr]


def format_table(rows: Dict[str, MetricsReport]) -> str:
    """Plain-text comparison table, one row per model or configuration."""
    width = max([len("Model")] + [len(k) for k in rows]) + 2
    head = "Model".ljust(width) + "".join(c.rjust(10) for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        cells = ["n/a".rjust(10) if v is None else f"{100 * v:9.2f}%" for v in _row_values(r)]
        lines.append(name.ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


def report_json(rows: Dict[str, MetricsReport], provenance: Optional[dict] = None) -> str:
    payload = {"rows": {k: v.to_mapping() for k, v in rows.items()}}
    if provenance is not None:
        payload["provenance"] = provenance
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
