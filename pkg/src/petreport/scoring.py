"""Clinical-efficacy scoring over extracted label matrices.

Every (report, region) cell is one classification instance. Counts are
pooled over all reports and regions per channel, summarized as
per-class F1, and macro-averaged over four class subsets: all uptake
classes, all density classes, and abnormal-only versions that drop the
Normal ids (uptake 5, density 8). Values are kept on 0..1 here; the
serialization helpers scale to 0..100 for display.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .ontology import (
    CHANNEL_DENSITY,
    CHANNEL_UPTAKE,
    DENSITY_NAMES,
    DENSITY_NORMAL,
    LabelMatrix,
    N_DENSITY,
    N_UPTAKE,
    UPTAKE_NAMES,
    UPTAKE_NORMAL,
)

CHANNELS = ("pet", "ct")
_CHANNEL_AXIS = {"pet": CHANNEL_UPTAKE, "ct": CHANNEL_DENSITY}
_CHANNEL_NAMES = {"pet": UPTAKE_NAMES, "ct": DENSITY_NAMES}
CHANNEL_CLASSES = {
    "pet": tuple(range(1, N_UPTAKE + 1)),
    "ct": tuple(range(1, N_DENSITY + 1)),
}

# variant -> (channel, class subset S)
VARIANTS: Dict[str, Tuple[str, Tuple[int, ...]]] = {
    "pet_all": ("pet", CHANNEL_CLASSES["pet"]),
    "ct_all": ("ct", CHANNEL_CLASSES["ct"]),
    "pet_abnormal": ("pet", tuple(k for k in CHANNEL_CLASSES["pet"] if k != UPTAKE_NORMAL)),
    "ct_abnormal": ("ct", tuple(k for k in CHANNEL_CLASSES["ct"] if k != DENSITY_NORMAL)),
}


def _check_pair(truth: LabelMatrix, pred: LabelMatrix):
    if truth.values.shape != pred.values.shape:
        raise ValueError(
            f"label matrices must share a shape, got {truth.values.shape} "
            f"vs {pred.values.shape}"
        )


def confusion_counts(truth: LabelMatrix, pred: LabelMatrix, k: int,
                     channel: str) -> Tuple[int, int, int]:
    """(TP, FP, FN) for class k, pooled over reports and regions."""
    _check_pair(truth, pred)
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")
    axis = _CHANNEL_AXIS[channel]
    t = truth.values[:, :, axis]
    p = pred.values[:, :, axis]
    tp = int(np.sum((t == k) & (p == k)))
    fp = int(np.sum((t != k) & (p == k)))
    fn = int(np.sum((t == k) & (p != k)))
    return tp, fp, fn


def precision_recall_f1(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """Zero denominators score 0 rather than raising."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class ClassScore:
    channel: str
    class_id: int
    name: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def defined(self) -> bool:
        return 2 * self.tp + self.fp + self.fn > 0


def petrg_score(f1_by_class: Mapping[int, float], variant: str) -> float:
    """Arithmetic mean of per-class F1 over the variant's class subset."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {tuple(VARIANTS)}")
    _, subset = VARIANTS[variant]
    if not subset:
        raise ValueError(f"variant {variant!r} has an empty class subset")
    missing = [k for k in subset if k not in f1_by_class]
    if missing:
        raise ValueError(f"missing F1 for classes {missing} in variant {variant!r}")
    return sum(f1_by_class[k] for k in subset) / len(subset)


def weighted_petrg_score(f1_by_class: Mapping[int, float],
                         support_by_class: Mapping[int, int], variant: str) -> float:
    """Support-weighted companion of the macro score; zero support -> 0."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {tuple(VARIANTS)}")
    _, subset = VARIANTS[variant]
    total = sum(support_by_class.get(k, 0) for k in subset)
    if total == 0:
        return 0.0
    return sum(f1_by_class[k] * support_by_class.get(k, 0) for k in subset) / total


@dataclass
class ScoreReport:
    """Per-class scores plus the four macro variants, for one truth/pred pair."""

    n_reports: int
    classes: Dict[str, List[ClassScore]]
    macro: Dict[str, float]
    weighted: Dict[str, float]
    exclude_undefined: bool = False

    def class_scores(self, channel: str) -> List[ClassScore]:
        return self.classes[channel]

    def to_json_dict(self) -> dict:
        return {
            "n_reports": self.n_reports,
            "exclude_undefined": self.exclude_undefined,
            "classes": {
                channel: [
                    {
                        "class_id": s.class_id,
                        "name": s.name,
                        "tp": s.tp,
                        "fp": s.fp,
                        "fn": s.fn,
                        "support": s.support,
                        "precision": round(100.0 * s.precision, 4),
                        "recall": round(100.0 * s.recall, 4),
                        "f1": round(100.0 * s.f1, 4),
                    }
                    for s in scores
                ]
                for channel, scores in self.classes.items()
            },
            "macro": {k: round(100.0 * v, 4) for k, v in self.macro.items()},
            "weighted": {k: round(100.0 * v, 4) for k, v in self.weighted.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_csv(self) -> str:
        import csv

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["kind", "channel", "class_id", "name", "tp", "fp", "fn",
                         "support", "precision", "recall", "f1"])
        for channel in CHANNELS:
            for s in self.classes[channel]:
                writer.writerow(["class", channel, s.class_id, s.name, s.tp, s.fp,
                                 s.fn, s.support, f"{100 * s.precision:.4f}",
                                 f"{100 * s.recall:.4f}", f"{100 * s.f1:.4f}"])
        for variant, value in self.macro.items():
            writer.writerow(["macro", VARIANTS[variant][0], "", variant, "", "", "",
                             "", "", "", f"{100 * value:.4f}"])
        for variant, value in self.weighted.items():
            writer.writerow(["weighted", VARIANTS[variant][0], "", variant, "", "",
                             "", "", "", "", f"{100 * value:.4f}"])
        return buf.getvalue()


def score_matrices(truth: LabelMatrix, pred: LabelMatrix,
                   exclude_undefined: bool = False) -> ScoreReport:
    """Full scoring pass over a truth/prediction matrix pair."""
    _check_pair(truth, pred)
    classes: Dict[str, List[ClassScore]] = {}
    for channel in CHANNELS:
        scores = []
        for k in CHANNEL_CLASSES[channel]:
            tp, fp, fn = confusion_counts(truth, pred, k, channel)
            precision, recall, f1 = precision_recall_f1(tp, fp, fn)
            scores.append(ClassScore(channel, k, _CHANNEL_NAMES[channel][k],
                                     tp, fp, fn, precision, recall, f1))
        classes[channel] = scores
    macro: Dict[str, float] = {}
    weighted: Dict[str, float] = {}
    for variant, (channel, subset) in VARIANTS.items():
        pool = [s for s in classes[channel] if s.class_id in subset]
        if exclude_undefined:
            pool = [s for s in pool if s.defined]
        macro[variant] = sum(s.f1 for s in pool) / len(pool) if pool else 0.0
        total = sum(s.support for s in pool)
        weighted[variant] = (
            sum(s.f1 * s.support for s in pool) / total if total else 0.0
        )
    return ScoreReport(truth.n_reports, classes, macro, weighted, exclude_undefined)


def all_normal_baseline(truth: LabelMatrix) -> ScoreReport:
    """Score of the degenerate predictor that calls everything Normal."""
    return score_matrices(truth, LabelMatrix.all_normal(truth.n_reports))


def confusion_matrix_full(truth: LabelMatrix, pred: LabelMatrix,
                          channel: str) -> np.ndarray:
    """K x K matrix, rows = truth class, columns = predicted class."""
    _check_pair(truth, pred)
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")
    axis = _CHANNEL_AXIS[channel]
    k_max = len(CHANNEL_CLASSES[channel])
    out = np.zeros((k_max, k_max), dtype=np.int64)
    t = truth.values[:, :, axis].ravel()
    p = pred.values[:, :, axis].ravel()
    np.add.at(out, (t - 1, p - 1), 1)
    return out
