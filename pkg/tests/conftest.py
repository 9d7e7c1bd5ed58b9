from dataclasses import dataclass

import numpy as np
import pytest

from robosac.detection import ConsensusConfig
from robosac.engine import AgentMessage, FrameBundle
from robosac.geometry import DetectionSet


@dataclass
class ToyModel:
    """Fusion stand-in: attackers add far-off false boxes, benign teammates add nothing."""

    fused_calls: int = 0
    individual_calls: int = 0

    def predict_individual(self, ego):
        self.individual_calls += 1
        return ego.payload

    def predict_fused(self, ego, teammates):
        self.fused_calls += 1
        rows = [ego.payload.data]
        for m in teammates:
            if m.payload == "attacker":
                rows.append(np.array([[30.0 + 6 * k, 30.0, 4.0, 2.0, 0.0, 0.99] for k in range(4)]))
        return DetectionSet(np.vstack(rows), ego.payload.frame_id)


EGO_BOXES = DetectionSet(np.array([[4.0 * i, 0.0, 4.0, 2.0, 0.0, 0.9] for i in range(3)]))
TOY_CONSENSUS = ConsensusConfig(epsilon=0.3, mode="jaccard")


def toy_frame(roles, frame_id=0, ids=None):
    ids = ids or list(range(1, len(roles) + 1))
    ego = AgentMessage(0, EGO_BOXES.with_frame(frame_id))
    return FrameBundle(frame_id, ego, tuple(AgentMessage(i, r) for i, r in zip(ids, roles)))


@pytest.fixture
def toy_model():
    return ToyModel()
