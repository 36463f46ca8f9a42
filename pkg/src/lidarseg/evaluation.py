"""Confusion-matrix evaluation with per-class F-measure in percent."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import CLASS_NAMES, NUM_CLASSES


@dataclass
class ClassScore:
    label: int
    name: str
    precision: float  # percent
    recall: float     # percent
    f_measure: float  # percent
    support: int      # ground-truth count


@dataclass
class EvalReport:
    confusion: np.ndarray          # (K, K) rows=truth, cols=predicted
    per_class: list[ClassScore]
    macro_f: float                 # mean F over the named classes (unknown excluded)
    macro_f_with_unknown: float    # mean F over all classes
    accuracy: float                # percent


def confusion_matrix(predicted: list[int], truth: list[int],
                     num_classes: int = NUM_CLASSES) -> np.ndarray:
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth must have equal length")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(predicted, truth):
        if not (1 <= p <= num_classes and 1 <= t <= num_classes):
            raise ValueError(f"labels must be in 1..{num_classes}, got ({p}, {t})")
        mat[t - 1, p - 1] += 1
    return mat


def f_measure(precision: float, recall: float) -> float:
    """2 * recall * precision / (recall + precision), scaled to percent.

    precision and recall are fractions in [0, 1]; a 0/0 case scores 0.
    """
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must be fractions in [0, 1]")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision) * 100.0


def evaluate(predicted: list[int], truth: list[int],
             num_classes: int = NUM_CLASSES) -> EvalReport:
    mat = confusion_matrix(predicted, truth, num_classes)
    per_class = []
    for k in range(num_classes):
        tp = int(mat[k, k])
        fp = int(mat[:, k].sum() - tp)
        fn = int(mat[k, :].sum() - tp)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        name = CLASS_NAMES[k] if num_classes == NUM_CLASSES else f"class_{k + 1}"
        per_class.append(ClassScore(k + 1, name, prec * 100.0, rec * 100.0,
                                    f_measure(prec, rec), int(mat[k, :].sum())))
    named = per_class[:-1] if num_classes == NUM_CLASSES else per_class
    macro = float(np.mean([c.f_measure for c in named])) if named else 0.0
    macro_all = float(np.mean([c.f_measure for c in per_class]))
    total = int(mat.sum())
    acc = float(np.trace(mat) / total * 100.0) if total else 0.0
    return EvalReport(mat, per_class, macro, macro_all, acc)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "confusion": report.confusion.tolist(),
        "per_class": [
            {
                "label": c.label,
                "name": c.name,
                "precision": c.precision,
                "recall": c.recall,
                "f_measure": c.f_measure,
                "support": c.support,
            }
            for c in report.per_class
        ],
        "macro_f": report.macro_f,
        "macro_f_with_unknown": report.macro_f_with_unknown,
        "accuracy": report.accuracy,
    }


def write_report(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=1)


def write_report_csv(path: str, report: EvalReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "name", "precision", "recall", "f_measure",
                         "support"])
        for c in report.per_class:
            writer.writerow([c.label, c.name, repr(c.precision), repr(c.recall),
                             repr(c.f_measure), c.support])
