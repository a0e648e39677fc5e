"""Unweighted accuracy, fold pooling, conditional analysis and report files."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import N_CLASSES, Corpus, EmotionLabel, previous_labels

LABEL_NAMES = tuple(lab.name for lab in EmotionLabel)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    """segment key -> (true label, predicted label)."""

    items: Mapping[str, tuple[EmotionLabel, EmotionLabel]]
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        items = {
            str(k): (EmotionLabel.parse(t), EmotionLabel.parse(p)) for k, (t, p) in sorted(self.items.items())
        }
        if not items:
            raise EvaluationError("a prediction set must be non-empty")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return len(self.items)

    @property
    def y_true(self) -> np.ndarray:
        return np.array([int(t) for t, _ in self.items.values()], dtype=np.int64)

    @property
    def y_pred(self) -> np.ndarray:
        return np.array([int(p) for _, p in self.items.values()], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "provenance": list(self.provenance),
            "predictions": {k: [t.name, p.name] for k, (t, p) in self.items.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionSet":
        return cls({k: tuple(v) for k, v in d["predictions"].items()}, tuple(d.get("provenance", ())))


def save_predictions(preds: PredictionSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(preds.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_predictions(path: str | Path) -> PredictionSet:
    return PredictionSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int]) -> np.ndarray:
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_recall(y_true: Sequence[int], y_pred: Sequence[int]) -> np.ndarray:
    cm = confusion_matrix(y_true, y_pred)
    support = cm.sum(axis=1)
    missing = [LABEL_NAMES[c] for c in range(N_CLASSES) if support[c] == 0]
    if missing:
        raise EvaluationError(f"classes absent from the reference labels: {', '.join(missing)}")
    return np.diag(cm) / support


def unweighted_accuracy(predictions: PredictionSet | tuple[Sequence[int], Sequence[int]]) -> float:
    """Mean of the four per-class recalls; every class must occur in the truth."""
    if isinstance(predictions, PredictionSet):
        y_true, y_pred = predictions.y_true, predictions.y_pred
    else:
        y_true, y_pred = predictions
    return float(per_class_recall(y_true, y_pred).mean())


def combine_folds(folds: Iterable[PredictionSet]) -> PredictionSet:
    merged: dict = {}
    provenance: list[str] = []
    for fold in folds:
        overlap = merged.keys() & fold.items.keys()
        if overlap:
            raise EvaluationError(f"folds overlap on {len(overlap)} segments, e.g. {sorted(overlap)[0]}")
        merged.update(fold.items)
        provenance.extend(fold.provenance)
    if not merged:
        raise EvaluationError("nothing to combine")
    return PredictionSet(merged, tuple(sorted(provenance)))


@dataclass(frozen=True)
class ConditionalMatrix:
    """Recall of target emotion c among segments whose previous segment has emotion p."""

    recall: np.ndarray  # (4, 4), nan where support is 0
    support: np.ndarray  # (4, 4)
    n_no_previous: int
    recall_no_previous: np.ndarray = field(default_factory=lambda: np.full(N_CLASSES, np.nan))
    support_no_previous: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, dtype=np.int64))


def conditional_accuracy(predictions: PredictionSet, corpus: Corpus) -> ConditionalMatrix:
    prev = previous_labels(corpus)
    correct = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    support = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    nc_correct = np.zeros(N_CLASSES, dtype=np.int64)
    nc_support = np.zeros(N_CLASSES, dtype=np.int64)
    for key, (t, p) in predictions.items.items():
        if key not in prev:
            raise EvaluationError(f"prediction for unknown segment {key}")
        before = prev[key]
        if before is None:
            nc_support[t] += 1
            nc_correct[t] += int(t == p)
        else:
            support[before, t] += 1
            correct[before, t] += int(t == p)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, correct / np.maximum(support, 1), np.nan)
        nc_recall = np.where(nc_support > 0, nc_correct / np.maximum(nc_support, 1), np.nan)
    return ConditionalMatrix(recall, support, int(nc_support.sum()), nc_recall, nc_support)


@dataclass(frozen=True)
class EvalReport:
    per_class_recall: np.ndarray
    ua: float
    confusion: np.ndarray
    conditional: ConditionalMatrix | None
    n_predictions: int

    @property
    def n_no_previous(self) -> int:
        return self.conditional.n_no_previous if self.conditional is not None else 0


def evaluate(predictions: PredictionSet, corpus: Corpus | None = None) -> EvalReport:
    recall = per_class_recall(predictions.y_true, predictions.y_pred)
    return EvalReport(
        per_class_recall=recall,
        ua=float(recall.mean()),
        confusion=confusion_matrix(predictions.y_true, predictions.y_pred),
        conditional=conditional_accuracy(predictions, corpus) if corpus is not None else None,
        n_predictions=len(predictions),
    )


# --- report files -------------------------------------------------------------

def _fmt(x: float) -> str:
    return "" if np.isnan(x) else f"{x:.6f}"


def _writer(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_report(
    report: EvalReport,
    out_dir: str | Path,
    sweep: Sequence[tuple[int, int, float]] | None = None,
    title: str = "evaluation",
) -> list[Path]:
    """Write the CSV files and ``summary.txt``; returns the paths written.

    confusion.csv   true, then one count column per predicted label
    per_class.csv   class, support, correct, recall
    conditional.csv previous, then recall_<LABEL> and n_<LABEL> per target;
                    a final ``none`` row holds segments without a previous one
    sweep.csv       n_prev, n_next, ua
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "confusion.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["true"] + [f"pred_{n}" for n in LABEL_NAMES])
        for c, row in enumerate(report.confusion):
            w.writerow([LABEL_NAMES[c]] + [int(v) for v in row])
    written.append(path)

    path = out / "per_class.csv"
    fh, w = _writer(path)
    support = report.confusion.sum(axis=1)
    with fh:
        w.writerow(["class", "support", "correct", "recall"])
        for c in range(N_CLASSES):
            w.writerow([LABEL_NAMES[c], int(support[c]), int(report.confusion[c, c]), _fmt(report.per_class_recall[c])])
        w.writerow(["UA", int(support.sum()), int(np.trace(report.confusion)), _fmt(report.ua)])
    written.append(path)

    if report.conditional is not None:
        cond = report.conditional
        path = out / "conditional.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["previous"] + [f"recall_{n}" for n in LABEL_NAMES] + [f"n_{n}" for n in LABEL_NAMES])
            for p in range(N_CLASSES):
                w.writerow([LABEL_NAMES[p]] + [_fmt(v) for v in cond.recall[p]] + [int(v) for v in cond.support[p]])
            w.writerow(["none"] + [_fmt(v) for v in cond.recall_no_previous] + [int(v) for v in cond.support_no_previous])
        written.append(path)

    if sweep is not None:
        path = out / "sweep.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["n_prev", "n_next", "ua"])
            for n_prev, n_next, ua in sweep:
                w.writerow([int(n_prev), int(n_next), _fmt(ua)])
        written.append(path)

    lines = [
        f"{title}",
        f"predictions: {report.n_predictions}",
        f"UA: {report.ua:.4f}",
        "per-class recall: " + ", ".join(f"{n}={r:.4f}" for n, r in zip(LABEL_NAMES, report.per_class_recall)),
    ]
    if report.conditional is not None:
        lines.append(f"segments without a previous segment: {report.n_no_previous}")
    if sweep is not None:
        lines.append("sweep (n_prev, n_next -> UA): " + "; ".join(f"{a},{b} -> {u:.4f}" for a, b, u in sweep))
    path = out / "summary.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    return written
