"""Sample-consensus teammate selection for collaborative perception."""

from robosac.a2cp import A2CPResult, ProbeState, a2cp_run, a2cp_step
from robosac.detection import (
    ConsensusConfig,
    FieldOfView,
    average_precision,
    consensus,
    difference_measure,
    hungarian_match,
)
from robosac.engine import (
    AgentMessage,
    ConfigError,
    EngineConfig,
    FrameBundle,
    FusionModel,
    RobosacOutcome,
    robosac_frame,
    robosac_sequence,
)
from robosac.geometry import DetectionSet, OrientedBox, pairwise_iou, rotated_iou
from robosac.sampling import (
    InfeasiblePlan,
    SamplingError,
    SamplingPlan,
    UnboundedCollaborators,
    a2cp_upper_bounds,
    clean_sample_probability_exact,
    expected_steps,
    max_collaborators,
    sampling_budget,
    success_probability,
    success_probability_exact,
)

__version__ = "0.1.0"

__all__ = [
    "A2CPResult",
    "ProbeState",
    "a2cp_run",
    "a2cp_step",
    "ConsensusConfig",
    "FieldOfView",
    "average_precision",
    "consensus",
    "difference_measure",
    "hungarian_match",
    "AgentMessage",
    "ConfigError",
    "EngineConfig",
    "FrameBundle",
    "FusionModel",
    "RobosacOutcome",
    "robosac_frame",
    "robosac_sequence",
    "DetectionSet",
    "OrientedBox",
    "pairwise_iou",
    "rotated_iou",
    "InfeasiblePlan",
    "SamplingError",
    "SamplingPlan",
    "UnboundedCollaborators",
    "a2cp_upper_bounds",
    "clean_sample_probability_exact",
    "expected_steps",
    "max_collaborators",
    "sampling_budget",
    "success_probability",
    "success_probability_exact",
]
