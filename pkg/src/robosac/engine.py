"""Per-frame hypothesize-and-verify teammate selection.

Each frame the ego compares the detections it gets from fusing a random
subset of teammates against a reference (its own individual detections, or
the previous frame's output) and accepts the first subset that agrees.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Protocol, Sequence

import numpy as np

from robosac.detection import ConsensusConfig, difference_measure
from robosac.geometry import DetectionSet
from robosac.sampling import SamplingPlan

__all__ = [
    "AgentMessage",
    "FusionModel",
    "EngineConfig",
    "FrameBundle",
    "RobosacOutcome",
    "SequenceResult",
    "ConfigError",
    "frame_rng",
    "robosac_frame",
    "robosac_sequence",
    "write_outcome_log",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """The engine was asked to run an impossible configuration."""


@dataclass(frozen=True)
class AgentMessage:
    """What one agent shares in a frame. ``payload`` is opaque to the engine."""

    agent_id: int
    payload: Any = None


class FusionModel(Protocol):
    """Perception model contract.

    ``predict_fused(ego, [])`` must equal ``predict_individual(ego)`` and both
    must be deterministic. Models shared between worker threads must also be
    safe for concurrent calls.
    """

    def predict_individual(self, ego: AgentMessage) -> DetectionSet: ...

    def predict_fused(self, ego: AgentMessage, teammates: Sequence[AgentMessage]) -> DetectionSet: ...


@dataclass(frozen=True)
class EngineConfig:
    plan: SamplingPlan
    consensus: ConsensusConfig
    reference: Literal["individual", "temporal"] = "individual"
    team_mode: Literal["dynamic", "static"] = "dynamic"
    rng_seed: int = 0
    no_repeat: bool = False

    def __post_init__(self) -> None:
        if self.reference not in ("individual", "temporal"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.team_mode not in ("dynamic", "static"):
            raise ConfigError(f"unknown team mode {self.team_mode!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")


@dataclass
class RobosacOutcome:
    output: DetectionSet
    steps_used: int
    consensus_reached: bool
    accepted_teammates: list[int] = field(default_factory=list)
    frame_id: int = 0
    draws: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    fused_calls: int = 0
    individual_calls: int = 0

    def to_record(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "steps_used": self.steps_used,
            "consensus": self.consensus_reached,
            "accepted_ids": list(self.accepted_teammates),
            "sampled_ids": [list(ids) for ids, _ in self.draws],
            "d_values": [d for _, d in self.draws],
        }


@dataclass(frozen=True)
class FrameBundle:
    frame_id: int
    ego: AgentMessage
    teammates: tuple[AgentMessage, ...]


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    """Independent generator for one frame, derived from ``(seed, frame_id)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(frame_id,)))


def _subset_stream(rng: np.random.Generator, n: int, s: int, no_repeat: bool):
    if no_repeat:
        combos = list(itertools.combinations(range(n), s))
        for k in rng.permutation(len(combos)):
            yield combos[k]
        return
    while True:
        yield tuple(sorted(int(i) for i in rng.choice(n, size=s, replace=False)))


def robosac_frame(
    ego: AgentMessage,
    teammates: Sequence[AgentMessage],
    model: FusionModel,
    cfg: EngineConfig,
    reference_set: DetectionSet | None = None,
    rng: np.random.Generator | None = None,
    budget: int | None = None,
    frame_id: int = 0,
    individual: DetectionSet | None = None,
    memo: dict | None = None,
) -> RobosacOutcome:
    """Sample teammate subsets until one agrees with the reference or the budget runs out.

    ``budget`` overrides ``cfg.plan.budget`` (the validation experiment uses
    a large one and compares the steps afterwards). On exhaustion the output
    is the ego's individual detections; pass ``individual`` when the caller
    already has them. ``memo`` lets callers that replay the same frame and
    reference many times (repeated experiments) share the fused outputs and
    their distances across calls.
    """
    plan = cfg.plan
    n_team = len(teammates)
    s = plan.sample_size
    ids = [m.agent_id for m in teammates]
    if len(set(ids)) != n_team:
        raise ConfigError(f"duplicate teammate ids in frame {frame_id}: {ids}")
    if s > n_team:
        raise ConfigError(f"sample size {s} exceeds team size {n_team}")
    if not plan.feasible:
        raise ConfigError(
            f"plan assumes {plan.benign_count} benign teammates, fewer than sample size {s}"
        )
    if rng is None:
        rng = frame_rng(cfg.rng_seed, frame_id)
    limit = plan.budget if budget is None else budget

    individual_calls = 0
    if reference_set is None:
        if individual is None:
            individual = model.predict_individual(ego)
            individual_calls = 1
        reference = individual
    else:
        reference = reference_set

    draws: list[tuple[tuple[int, ...], float]] = []
    cache: dict[tuple[int, ...], tuple[DetectionSet, float]] = {} if memo is None else memo
    subsets = _subset_stream(rng, n_team, s, cfg.no_repeat)
    for step, idx in zip(range(1, limit + 1), subsets):
        accepted = tuple(teammates[i].agent_id for i in idx)
        if accepted not in cache:
            fused = model.predict_fused(ego, [teammates[i] for i in idx])
            cache[accepted] = (fused, difference_measure(fused, reference, cfg.consensus))
        fused, d = cache[accepted]
        draws.append((accepted, d))
        if d <= cfg.consensus.epsilon:
            return RobosacOutcome(
                output=fused,
                steps_used=step,
                consensus_reached=True,
                accepted_teammates=list(accepted),
                frame_id=frame_id,
                draws=draws,
                fused_calls=step,
                individual_calls=individual_calls,
            )

    if individual is None:
        individual = model.predict_individual(ego)
        individual_calls += 1
    return RobosacOutcome(
        output=individual,
        steps_used=len(draws),
        consensus_reached=False,
        accepted_teammates=[],
        frame_id=frame_id,
        draws=draws,
        fused_calls=len(draws),
        individual_calls=individual_calls,
    )


@dataclass
class SequenceResult:
    outcomes: list[RobosacOutcome]
    summary: dict
    events: list[str] = field(default_factory=list)


def _summarize(outcomes: list[RobosacOutcome]) -> dict:
    steps = np.array([o.steps_used for o in outcomes], dtype=float)
    return {
        "frames": len(outcomes),
        "success_rate": float(np.mean([o.consensus_reached for o in outcomes])),
        "total_steps": int(steps.sum()),
        "mean_steps": float(steps.mean()),
        "fused_calls": int(sum(o.fused_calls for o in outcomes)),
        "individual_calls": int(sum(o.individual_calls for o in outcomes)),
    }


def robosac_sequence(
    frames: Sequence[FrameBundle],
    model: FusionModel,
    cfg: EngineConfig,
    budget: int | None = None,
) -> SequenceResult:
    """Run the selection loop over a scene.

    ``dynamic`` teams resample every frame. ``static`` teams keep the first
    accepted subset, fuse with it without sampling, and fall back to sampling
    if that trusted subset ever stops agreeing with the reference. With the
    ``temporal`` reference, each frame is checked against the previous frame's
    output instead of a fresh individual prediction.
    """
    if not frames:
        raise ConfigError("empty frame list")
    if cfg.team_mode == "static":
        first = sorted(m.agent_id for m in frames[0].teammates)
        for fb in frames[1:]:
            if sorted(m.agent_id for m in fb.teammates) != first:
                raise ConfigError(f"static team changed membership at frame {fb.frame_id}")

    outcomes: list[RobosacOutcome] = []
    events: list[str] = []
    trusted: list[int] | None = None
    previous: DetectionSet | None = None

    for fb in frames:
        rng = frame_rng(cfg.rng_seed, fb.frame_id)
        ref = previous if cfg.reference == "temporal" else None

        if trusted is not None:
            by_id = {m.agent_id: m for m in fb.teammates}
            fused = model.predict_fused(fb.ego, [by_id[i] for i in trusted])
            individual_calls = 0
            if ref is None:
                ref = model.predict_individual(fb.ego)
                individual_calls = 1
            d = difference_measure(fused, ref, cfg.consensus)
            if d <= cfg.consensus.epsilon:
                out = RobosacOutcome(
                    output=fused,
                    steps_used=0,
                    consensus_reached=True,
                    accepted_teammates=list(trusted),
                    frame_id=fb.frame_id,
                    draws=[(tuple(trusted), d)],
                    fused_calls=1,
                    individual_calls=individual_calls,
                )
                outcomes.append(out)
                previous = out.output
                continue
            events.append(f"frame {fb.frame_id}: trusted set {trusted} lost consensus (d={d:.3f})")
            log.info(events[-1])
            trusted = None
            out = robosac_frame(
                fb.ego, fb.teammates, model, cfg, reference_set=ref, rng=rng,
                budget=budget, frame_id=fb.frame_id,
                individual=ref if cfg.reference == "individual" else None,
            )
            out.fused_calls += 1
            out.individual_calls += individual_calls
        else:
            out = robosac_frame(
                fb.ego, fb.teammates, model, cfg, reference_set=ref, rng=rng,
                budget=budget, frame_id=fb.frame_id,
            )

        if cfg.team_mode == "static" and out.consensus_reached:
            trusted = list(out.accepted_teammates)
        outcomes.append(out)
        previous = out.output

    return SequenceResult(outcomes=outcomes, summary=_summarize(outcomes), events=events)


def write_outcome_log(outcomes: Iterable[RobosacOutcome], path) -> None:
    """JSON-lines outcome log, one record per frame."""
    with open(path, "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_record()) + "\n")
