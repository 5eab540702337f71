"""2-D projections of embeddings and vector-graphic result plots.

Plots are emitted as SVG with pinned metadata (no timestamps, fixed hash
salt), so emitting the same data twice produces byte-identical files and
plot artifacts can be diffed across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")  # file output only; never touch a display
import matplotlib.pyplot as plt

from .evaluation import RocCurve, auc

_SVG_RC = {"svg.hashsalt": "cvdlab"}
_SVG_METADATA = {"Date": None}  # drop the creation timestamp for reproducible bytes


@dataclass(frozen=True)
class ProjectionConfig:
    """How to flatten embeddings to 2-D."""

    method: str = "tsne"
    perplexity: float = 30.0
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method != "tsne":
            raise ValueError(f"unknown projection method {self.method!r}")
        if not (self.perplexity > 0):
            raise ValueError(f"perplexity must be positive, got {self.perplexity}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def project_2d(vectors: np.ndarray, config: ProjectionConfig | None = None) -> np.ndarray:
    """Project an (N, d) embedding stack to (N, 2), deterministically per seed."""
    config = config or ProjectionConfig()
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 4:
        raise ValueError(f"need a 2-D stack of at least 4 vectors, got shape {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("embedding values must be finite")
    if np.all(vectors == vectors[0]):
        raise ValueError("all points are identical; a 2-D projection is undefined")
    if config.perplexity >= vectors.shape[0]:
        raise ValueError(
            f"perplexity {config.perplexity} must be smaller than the point count {vectors.shape[0]}"
        )
    from sklearn.manifold import TSNE

    projector = TSNE(
        n_components=2,
        perplexity=config.perplexity,
        max_iter=config.iterations,
        random_state=config.seed,
        init="pca",
        method="exact",
    )
    return np.asarray(projector.fit_transform(vectors), dtype=np.float64)


def class_silhouette(points: np.ndarray, labels: Sequence[int]) -> float:
    """Silhouette of the class labeling over projected points (higher = more
    separated groups)."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.shape[0] != labels.shape[0]:
        raise ValueError(f"{points.shape[0]} points vs {labels.shape[0]} labels")
    if len(set(labels.tolist())) < 2:
        raise ValueError("silhouette needs at least two classes")
    from sklearn.metrics import silhouette_score

    return float(silhouette_score(points, labels))


def emit_roc_plot(curves: Sequence[tuple[str, RocCurve]], path: str | Path) -> None:
    """Draw one or more named ROC curves (AUC in the legend) plus the chance
    diagonal, as a deterministic SVG."""
    if len(curves) == 0:
        raise ValueError("need at least one curve to plot")
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 5.0))
        for name, curve in curves:
            ax.plot(curve.fpr, curve.tpr, linewidth=1.5, label=f"{name} (AUC = {auc(curve):.3f})")
        ax.plot([0, 1], [0, 1], linestyle="--", linewidth=1.0, color="grey", label="chance")
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right", fontsize=9)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
        plt.close(fig)


def emit_scatter_plot(points: np.ndarray, labels: Sequence[int], path: str | Path,
                      title: str | None = None) -> None:
    """Draw a two-color class scatter of projected points as a deterministic SVG."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {points.shape}")
    if points.shape[0] != labels.shape[0]:
        raise ValueError(f"{points.shape[0]} points vs {labels.shape[0]} labels")
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 5.0))
        for value, color, name in ((0, "tab:blue", "safe (0)"), (1, "tab:red", "vulnerable (1)")):
            mask = labels == value
            ax.scatter(points[mask, 0], points[mask, 1], s=12, color=color, label=name, alpha=0.8)
        ax.set_xlabel("component 1")
        ax.set_ylabel("component 2")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=9)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
        plt.close(fig)


def write_coordinates(points: np.ndarray, labels: Sequence[int] | None, path: str | Path) -> None:
    """Dump projected coordinates as a delimited table for external replotting."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must have shape (N, 2), got {points.shape}")
    if labels is not None and len(labels) != points.shape[0]:
        raise ValueError(f"{points.shape[0]} points vs {len(labels)} labels")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"] + (["label"] if labels is not None else []))
        for i in range(points.shape[0]):
            row = [repr(float(points[i, 0])), repr(float(points[i, 1]))]
            if labels is not None:
                row.append(str(labels[i]))
            writer.writerow(row)
