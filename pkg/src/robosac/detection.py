"""Set-level comparison of detections: matching, consensus and average precision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import linear_sum_assignment

from robosac.geometry import DetectionSet, pairwise_iou

__all__ = [
    "FieldOfView",
    "ConsensusConfig",
    "hungarian_match",
    "difference_measure",
    "consensus",
    "average_precision",
]


@dataclass(frozen=True)
class FieldOfView:
    """Circular sensing region in world coordinates (meters)."""

    center_x: float
    center_y: float
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"field-of-view radius must be positive, got {self.radius}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.center_x, self.center_y)


@dataclass(frozen=True)
class ConsensusConfig:
    """Parameters of the difference measure and the consensus threshold.

    ``jaccard`` compares the full sets; ``ego_fov`` first keeps only boxes
    centered inside ``fov`` so detections the ego could never have made do not
    count as disagreement.
    """

    epsilon: float = 0.3
    mode: Literal["jaccard", "ego_fov"] = "ego_fov"
    fov: FieldOfView | None = None
    match_min_iou: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.mode not in ("jaccard", "ego_fov"):
            raise ValueError(f"unknown consensus mode {self.mode!r}")
        if self.mode == "ego_fov" and self.fov is None:
            raise ValueError("ego_fov mode needs a field of view")
        if not 0.0 <= self.match_min_iou < 1.0:
            raise ValueError(f"match_min_iou must be in [0, 1), got {self.match_min_iou}")

    def to_dict(self) -> dict:
        fov = None if self.fov is None else {
            "center_x": self.fov.center_x, "center_y": self.fov.center_y, "radius": self.fov.radius
        }
        return {"epsilon": self.epsilon, "mode": self.mode, "fov": fov,
                "match_min_iou": self.match_min_iou}

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusConfig":
        fov = d.get("fov")
        return cls(
            epsilon=d.get("epsilon", 0.3),
            mode=d.get("mode", "ego_fov"),
            fov=None if fov is None else FieldOfView(**fov),
            match_min_iou=d.get("match_min_iou", 0.1),
        )


def _match_matrix(iou: np.ndarray, match_min_iou: float) -> list[tuple[int, int, float]]:
    if iou.size == 0:
        return []
    rows, cols = linear_sum_assignment(iou, maximize=True)
    return [
        (int(i), int(j), float(iou[i, j]))
        for i, j in zip(rows, cols)
        if iou[i, j] >= match_min_iou and iou[i, j] > 0.0
    ]


def hungarian_match(
    a: DetectionSet, b: DetectionSet, match_min_iou: float = 0.0
) -> list[tuple[int, int, float]]:
    """Maximum-total-IoU one-to-one assignment between two box sets.

    Returns ``(index_in_a, index_in_b, iou)`` triples sorted by ``index_in_a``;
    pairs below ``match_min_iou`` (and non-overlapping pairs) are dropped.
    """
    return _match_matrix(pairwise_iou(a, b), match_min_iou)


def _jaccard_distance(ys: DetectionSet, y0: DetectionSet, match_min_iou: float) -> float:
    denom = max(len(ys), len(y0), 1)
    if len(ys) == 0 and len(y0) == 0:
        return 0.0
    total = sum(iou for _, _, iou in hungarian_match(ys, y0, match_min_iou))
    return min(1.0, max(0.0, 1.0 - total / denom))


def difference_measure(ys: DetectionSet, y0: DetectionSet, cfg: ConsensusConfig) -> float:
    """Dissimilarity in [0, 1] between a fused output and a reference output.

    ``1 - (sum of Hungarian-matched IoUs) / max(|ys|, |y0|, 1)``, optionally
    restricted to the ego field of view.
    """
    if cfg.mode == "ego_fov":
        ys = ys.within(cfg.fov.center, cfg.fov.radius)
        y0 = y0.within(cfg.fov.center, cfg.fov.radius)
    return _jaccard_distance(ys, y0, cfg.match_min_iou)


def consensus(ys: DetectionSet, y0: DetectionSet, cfg: ConsensusConfig) -> bool:
    return difference_measure(ys, y0, cfg) <= cfg.epsilon


def average_precision(
    predictions: DetectionSet, gt: DetectionSet, iou_threshold: float = 0.5
) -> float:
    """All-point interpolated AP of scored predictions against ground truth."""
    n_gt = len(gt)
    if n_gt == 0:
        return 1.0 if len(predictions) == 0 else 0.0
    if len(predictions) == 0:
        return 0.0

    order = np.argsort(-predictions.scores, kind="stable")
    iou = pairwise_iou(predictions, gt)
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        cand = np.where(taken, -1.0, iou[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            taken[j] = True
            tp[rank] = 1.0

    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(order) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
