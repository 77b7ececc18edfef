"""Multi-view action inference: elect, threshold, average, argmax."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .distribution import ClassDistribution
from .errors import ContractError
from .imaging import Image
from .training import VIEWS
from .vit import ViTConfig, forward

CLASS_LABELS_16 = (
    "driver is driving normally and forward",
    "driver is drinking from water bottle",
    "driver is on a phone call with right hand",
    "driver is on a phone call with left hand",
    "driver is eating",
    "driver is texting through right hand",
    "driver is texting through left hand",
    "driver is setting her or his hair and makeup",
    "driver is reaching behind towards backseat",
    "driver is adjusting the control panel",
    "driver is picking up something near the driver's seat floor",
    "driver is picking up something near the passenger's seat floor",
    "driver is talking to the passenger sitting in the right seat",
    "driver is talking to the passengers sitting in the backseat",
    "driver is yawning",
    "driver's hand is on head",
)


def class_label(index: int, k: int) -> str:
    if k == len(CLASS_LABELS_16):
        return CLASS_LABELS_16[index]
    return f"class_{index}"


@dataclass(frozen=True)
class ViewPrediction:
    view_id: str
    distribution: ClassDistribution

    def __post_init__(self):
        if self.view_id not in VIEWS:
            raise ContractError(f"unknown view {self.view_id!r}")

    def to_json(self) -> str:
        return json.dumps({"view": self.view_id,
                           "probabilities": [float(p) for p in self.distribution.probabilities]})

    @classmethod
    def from_json(cls, text: str | bytes) -> "ViewPrediction":
        doc = json.loads(text)
        try:
            return cls(doc["view"], ClassDistribution(doc["probabilities"]))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed view distribution document: {exc}") from exc


@dataclass(frozen=True)
class FusionConfig:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ContractError(f"threshold must be in [0, 1], got {self.threshold}")


@dataclass(frozen=True)
class FusionResult:
    class_index: int
    fused_probability: float
    contributing_views: tuple[str, ...]
    fallback_used: bool
    distribution: ClassDistribution

    def to_dict(self) -> dict:
        k = self.distribution.k
        return {"class_index": self.class_index,
                "class_label": class_label(self.class_index, k),
                "fused_probability": self.fused_probability,
                "contributing_views": list(self.contributing_views),
                "fallback_used": self.fallback_used}


def predict_view(params: Mapping, image: Image, config: ViTConfig, view_id: str) -> ViewPrediction:
    return ViewPrediction(view_id, forward(image, params, config, training=False))


def fuse(predictions: Sequence[ViewPrediction], config: FusionConfig = FusionConfig()) -> FusionResult:
    """Combine one prediction per view.

    Views whose peak probability reaches the threshold are kept (all three
    when none does, flagged as fallback); their full distributions are
    averaged and the mean's argmax is the action, ties to the lower index.
    """
    if len(predictions) != 3:
        raise ContractError(f"three views required, got {len(predictions)}")
    by_view = {p.view_id: p for p in predictions}
    if set(by_view) != set(VIEWS):
        raise ContractError(f"need one prediction for each of {VIEWS}, got "
                            f"{[p.view_id for p in predictions]}")
    ks = {p.distribution.k for p in predictions}
    if len(ks) != 1:
        raise ContractError(f"class counts differ across views: {sorted(ks)}")

    # Canonical view order makes the result independent of input order.
    ordered = [by_view[v] for v in VIEWS]
    selected = [p for p in ordered if p.distribution.peak() >= config.threshold]
    fallback = not selected
    if fallback:
        selected = ordered
    mean = np.mean([p.distribution.probabilities for p in selected], axis=0)
    best = int(np.argmax(mean))
    return FusionResult(best, float(mean[best]), tuple(p.view_id for p in selected),
                        fallback, ClassDistribution(mean))
