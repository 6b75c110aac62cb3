"""Evaluation metrics: accuracy, clustering quality and the degree-bucket fairness report."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_THRESHOLDS = (2, 4, 6, 8, 10)


@dataclass(frozen=True)
class FairnessRow:
    threshold: int
    error: float
    bias: float
    count: int


@dataclass
class FairnessReport:
    rows: list[FairnessRow]
    overall_error: float
    notes: list[str] = field(default_factory=list)

    def row(self, threshold: int) -> FairnessRow | None:
        return next((r for r in self.rows if r.threshold == threshold), None)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "overall_error": self.overall_error, "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, data: dict) -> FairnessReport:
        return cls([FairnessRow(**r) for r in data["rows"]], data["overall_error"], list(data.get("notes", [])))

    def to_csv(self) -> str:
        lines = ["threshold,error,bias"]
        lines += [f"{r.threshold},{r.error:.4f},{r.bias:.4f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    return float((pred == labels).mean())


def fairness_report(predictions, labels, degrees, thresholds=DEFAULT_THRESHOLDS) -> FairnessReport:
    """Misclassification rate (%) of nodes with degree <= t, and its gap to the overall rate.

    Inputs are restricted to evaluation nodes by the caller.
    """
    predictions, labels, degrees = (np.asarray(a) for a in (predictions, labels, degrees))
    if not (len(predictions) == len(labels) == len(degrees)):
        raise ValueError("fairness_report: predictions, labels and degrees must be aligned")
    wrong = predictions != labels
    overall = 100.0 * float(wrong.mean()) if len(wrong) else float("nan")
    rows, notes = [], []
    for t in sorted(thresholds):
        bucket = degrees <= t
        count = int(bucket.sum())
        if count == 0:
            notes.append(f"no evaluation nodes with degree <= {t}; row omitted")
            continue
        err = 100.0 * float(wrong[bucket].mean())
        rows.append(FairnessRow(int(t), err, err - overall, count))
    return FairnessReport(rows, overall, notes)


def modularity_score(assign, A: np.ndarray) -> float:
    """Newman modularity of a hard partition (fraction, not percent)."""
    assign = np.asarray(assign)
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    two_m = d.sum()
    if two_m == 0:
        raise ValueError("modularity undefined for a graph without edges")
    same = assign[:, None] == assign[None, :]
    return float(((A - np.outer(d, d) / two_m) * same).sum() / two_m)


def conductance(assign, A: np.ndarray, num_clusters: int | None = None) -> tuple[float, list[str]]:
    """Mean over non-empty clusters of ``cut(S) / min(vol(S), vol(V \\ S))``.

    A cluster whose smaller side has zero volume (e.g. it spans every edge)
    contributes 0. Returns the fraction plus notes about empty clusters.
    """
    assign = np.asarray(assign)
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    total = d.sum()
    values, notes = [], []
    if num_clusters is None:
        num_clusters = int(assign.max()) + 1 if len(assign) else 0
    for c in range(num_clusters):
        members = assign == c
        if not members.any():
            notes.append(f"cluster {c} is empty")
            continue
        cut = float(A[members][:, ~members].sum())
        vol = float(d[members].sum())
        denom = min(vol, total - vol)
        values.append(cut / denom if denom > 0 else 0.0)
    return (float(np.mean(values)) if values else 0.0), notes
