"""Confusion matrices, accuracy, per-class precision/recall/F1 and sweep tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .types import LABELS, NUM_CLASSES, ClassLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, in label-index order."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(c < 0):
            raise ValueError(f"confusion matrix must be a non-negative {NUM_CLASSES}x{NUM_CLASSES} array")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted"] + [lab.value for lab in LABELS])
        for lab, row in zip(LABELS, self.counts):
            w.writerow([lab.value] + [int(v) for v in row])
        return buf.getvalue()


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zero = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~zero)
    return out, zero


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    precision_undefined: tuple[bool, ...]
    recall_undefined: tuple[bool, ...]
    provenance: dict = field(default_factory=dict)

    def rows(self) -> list[list[str]]:
        rows = [["metric"] + [lab.value for lab in LABELS]]
        for name, vals in (("precision", self.precision), ("recall", self.recall), ("f1", self.f1)):
            rows.append([name] + [pct(v) for v in vals])
        rows.append(["accuracy", pct(self.accuracy), "", ""])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        flags = [lab.value for lab, u in zip(LABELS, self.precision_undefined) if u]
        if flags:
            lines.append("precision undefined (no predictions) for: " + ", ".join(flags))
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.counts.tolist(),
            "classes": [lab.value for lab in LABELS],
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "precision_undefined": list(self.precision_undefined),
            "recall_undefined": list(self.recall_undefined),
            "provenance": self.provenance,
        }


def pct(x: float) -> str:
    return f"{100.0 * float(x):.2f}%"


def confusion_from_pairs(pairs) -> ConfusionMatrix:
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for true, pred in pairs:
        counts[_idx(true), _idx(pred)] += 1
    return ConfusionMatrix(counts)


def _idx(label) -> int:
    return label.index if isinstance(label, ClassLabel) else int(label)


def report_from_confusion(cm: ConfusionMatrix, provenance: dict | None = None) -> EvalReport:
    c = cm.counts.astype(np.float64)
    diag = np.diag(c)
    precision, p_zero = _ratio(diag, c.sum(axis=0))
    recall, r_zero = _ratio(diag, c.sum(axis=1))
    f1, _ = _ratio(2 * precision * recall, precision + recall)
    accuracy = float(np.trace(c) / c.sum())
    return EvalReport(cm, accuracy, precision, recall, f1, tuple(p_zero.tolist()), tuple(r_zero.tolist()),
                      dict(provenance or {}))


def score(predictions, provenance: dict | None = None) -> EvalReport:
    """Report for a list of (true, predicted) labels (ClassLabel or index)."""
    predictions = list(predictions)
    if not predictions:
        raise ValueError("no predictions to score")
    return report_from_confusion(confusion_from_pairs(predictions), provenance)


# -- sweep tables ------------------------------------------------------------------------------------
@dataclass(frozen=True)
class SweepEntry:
    family: str
    mode: str
    delta_offset_ms: int
    delta_step_samples: int | None
    voting: str
    n_p: int
    accuracy: float
    dataset_size: int | None = None


SWEEP_COLUMNS = ["family", "mode", "delta_offset_ms", "delta_step", "voting", "n_p", "dataset_size",
                 "accuracy", "best"]


@dataclass(frozen=True)
class SweepReport:
    entries: tuple[SweepEntry, ...]
    best: tuple[bool, ...]

    def best_entries(self) -> list[SweepEntry]:
        return [e for e, b in zip(self.entries, self.best) if b]

    def rows(self) -> list[list[str]]:
        rows = []
        for e, b in zip(self.entries, self.best):
            rows.append([
                e.family, e.mode, str(e.delta_offset_ms),
                "-" if e.delta_step_samples is None else str(e.delta_step_samples),
                e.voting, str(e.n_p), "" if e.dataset_size is None else str(e.dataset_size),
                pct(e.accuracy), "*" if b else "",
            ])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        rows = [SWEEP_COLUMNS] + self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(SWEEP_COLUMNS))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _entry_key(e: SweepEntry) -> tuple:
    return (e.family, e.mode, e.delta_offset_ms, e.delta_step_samples or 0, e.voting, e.n_p)


def sweep_report(entries) -> SweepReport:
    """Rows sorted deterministically; every row reaching its family's best accuracy is marked."""
    entries = sorted(entries, key=_entry_key)
    if not entries:
        raise ValueError("no sweep entries")
    best_by_family: dict[str, float] = {}
    for e in entries:
        best_by_family[e.family] = max(best_by_family.get(e.family, -1.0), e.accuracy)
    return SweepReport(tuple(entries), tuple(e.accuracy == best_by_family[e.family] for e in entries))
