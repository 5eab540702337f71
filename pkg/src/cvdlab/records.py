"""Per-sample prediction record shared by the inference and tuning paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping


@dataclass
class PredictionRecord:
    """One model decision about one test sample.

    `label` is the predicted class, or None when the model's output could
    not be parsed into a label word. `score` is the vulnerable-class
    probability for techniques that produce one. Retrieval-based techniques
    log the example ids and distances they pulled in; `degraded` marks
    selections that could not fully honor their strategy.
    """

    sample_id: str
    label: int | None
    score: float | None = None
    generated_text: str | None = None
    neighbor_ids: list[str] | None = None
    neighbor_distances: list[float] | None = None
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "label": self.label,
            "score": self.score,
            "generated_text": self.generated_text,
            "neighbor_ids": self.neighbor_ids,
            "neighbor_distances": self.neighbor_distances,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PredictionRecord":
        return cls(
            sample_id=d["sample_id"],
            label=d["label"],
            score=d.get("score"),
            generated_text=d.get("generated_text"),
            neighbor_ids=list(d["neighbor_ids"]) if d.get("neighbor_ids") is not None else None,
            neighbor_distances=(
                list(d["neighbor_distances"]) if d.get("neighbor_distances") is not None else None
            ),
            degraded=bool(d.get("degraded", False)),
        )
