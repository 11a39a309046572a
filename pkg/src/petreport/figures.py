"""Evaluation figures rendered to files (headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ontology import LabelMatrix
from .scoring import CHANNELS, ScoreReport, confusion_matrix_full


def f1_bar_chart(report: ScoreReport, channel: str, path) -> Path:
    scores = report.class_scores(channel)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(scores)), 4))
    xs = np.arange(len(scores))
    ax.bar(xs, [100.0 * s.f1 for s in scores], color="#4878a8")
    ax.set_xticks(xs)
    ax.set_xticklabels([f"{s.class_id}: {s.name}" for s in scores],
                       rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("F1 (0-100)")
    ax.set_ylim(0, 100)
    ax.set_title(f"Per-class F1, {channel.upper()} channel (n={report.n_reports})")
    for x, s in zip(xs, scores):
        ax.text(x, 100.0 * s.f1 + 1.5, f"{100 * s.f1:.1f}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def confusion_heatmap(truth: LabelMatrix, pred: LabelMatrix, channel: str, path) -> Path:
    cm = confusion_matrix_full(truth, pred, channel)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(cm, cmap="Blues")
    k = cm.shape[0]
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xticklabels([str(i + 1) for i in range(k)])
    ax.set_yticklabels([str(i + 1) for i in range(k)])
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(f"Confusion counts, {channel.upper()} channel")
    threshold = cm.max() / 2 if cm.max() else 0
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7,
                    color="white" if cm[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_evaluation_figures(report: ScoreReport, truth: LabelMatrix,
                            pred: LabelMatrix, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for channel in CHANNELS:
        paths.append(f1_bar_chart(report, channel, out_dir / f"f1_{channel}.png"))
        paths.append(confusion_heatmap(truth, pred, channel,
                                       out_dir / f"confusion_{channel}.png"))
    return paths
