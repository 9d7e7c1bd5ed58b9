"""Attacker-ratio estimation by aggressive-to-conservative probing with retrospect.

Starting from "nobody attacks", the ego probes candidate attacker ratios
``R_k`` by fusing ``S * (1 - R_k)`` random teammates. A consensus at ``R_k``
sets the estimate to ``R_k`` and closes every higher ratio; lower ratios stay
open until they have been tried ``U_k`` times, so a lucky consensus at a
conservative ratio can still be overturned by a more aggressive one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from robosac.detection import ConsensusConfig, difference_measure
from robosac.engine import FrameBundle, FusionModel, frame_rng
from robosac.sampling import a2cp_upper_bounds

__all__ = [
    "ProbeState",
    "Probe",
    "FrameProbeLog",
    "A2CPResult",
    "a2cp_step",
    "a2cp_run",
    "discretize_ratio",
]


@dataclass
class ProbeState:
    ratio_grid: list[float]
    team_size: int
    bounds: list[int]
    counters: list[int]
    budget: int
    estimate: float = 1.0
    order: Literal["round_robin", "lowest_first"] = "round_robin"

    @classmethod
    def create(
        cls,
        ratio_grid: Sequence[float],
        team_size: int,
        budget: int,
        confidence: float = 0.99,
        order: Literal["round_robin", "lowest_first"] = "round_robin",
    ) -> "ProbeState":
        if budget < 1:
            raise ValueError(f"per-frame budget must be >= 1, got {budget}")
        if order not in ("round_robin", "lowest_first"):
            raise ValueError(f"unknown probe order {order!r}")
        bounds = a2cp_upper_bounds(ratio_grid, team_size, confidence)
        return cls(
            ratio_grid=[float(r) for r in ratio_grid],
            team_size=team_size,
            bounds=bounds,
            counters=[0] * len(bounds),
            budget=budget,
            order=order,
        )

    @property
    def saturated(self) -> bool:
        return all(t >= u for t, u in zip(self.counters, self.bounds))

    def open_levels(self) -> list[int]:
        return [k for k, (t, u) in enumerate(zip(self.counters, self.bounds)) if t < u]

    def sample_size(self, k: int) -> int:
        return self.team_size - round(self.ratio_grid[k] * self.team_size)


@dataclass
class Probe:
    level: int
    ratio: float
    sampled_ids: tuple[int, ...]
    d: float
    consensus: bool


@dataclass
class FrameProbeLog:
    frame_id: int
    probes: list[Probe] = field(default_factory=list)
    estimate_after: float = 1.0
    accepted_ids: tuple[int, ...] | None = None


def a2cp_step(
    state: ProbeState,
    frame: FrameBundle,
    model: FusionModel,
    consensus_cfg: ConsensusConfig,
    rng: np.random.Generator,
    memo: dict | None = None,
) -> FrameProbeLog:
    """Spend up to ``state.budget`` probes on one frame, mutating ``state``.

    ``memo`` may carry distances for this frame from earlier runs, keyed by
    sorted teammate ids.
    """
    log = FrameProbeLog(frame_id=frame.frame_id, estimate_after=state.estimate)
    if state.saturated:
        return log
    teammates = list(frame.teammates)
    if len(teammates) != state.team_size:
        raise ValueError(
            f"frame {frame.frame_id} has {len(teammates)} teammates, expected {state.team_size}"
        )
    reference = model.predict_individual(frame.ego)
    cache: dict[tuple[int, ...], float] = {} if memo is None else memo

    def probe(k: int) -> bool:
        s = state.sample_size(k)
        idx = sorted(int(i) for i in rng.choice(len(teammates), size=s, replace=False))
        ids = tuple(sorted(teammates[i].agent_id for i in idx))
        if ids not in cache:
            fused = model.predict_fused(frame.ego, [teammates[i] for i in idx])
            cache[ids] = difference_measure(fused, reference, consensus_cfg)
        d = cache[ids]
        agreed = d <= consensus_cfg.epsilon
        log.probes.append(Probe(k, state.ratio_grid[k], ids, d, agreed))
        if agreed:
            state.estimate = state.ratio_grid[k]
            for j in range(k, len(state.bounds)):
                state.counters[j] = state.bounds[j]
            log.accepted_ids = ids
        else:
            state.counters[k] += 1
        return agreed

    n = 0
    while n < state.budget and not state.saturated:
        if state.order == "lowest_first":
            probe(state.open_levels()[0])
            n += 1
            continue
        # one ascending sweep over the open levels; a consensus restarts it
        for k in range(len(state.bounds)):
            if n >= state.budget:
                break
            if state.counters[k] >= state.bounds[k]:
                continue
            n += 1
            if probe(k):
                break
    log.estimate_after = state.estimate
    return log


@dataclass
class A2CPResult:
    estimate: float
    frames_to_final: int
    total_steps: int
    success: bool | None
    true_ratio: float | None
    frames: list[FrameProbeLog]

    def to_dict(self) -> dict:
        return {
            "true_ratio": self.true_ratio,
            "estimate": self.estimate,
            "frames_to_final": self.frames_to_final,
            "total_steps": self.total_steps,
            "success": self.success,
            "per_frame": [
                {
                    "frame_id": fl.frame_id,
                    "estimate_after": fl.estimate_after,
                    "accepted_ids": None if fl.accepted_ids is None else list(fl.accepted_ids),
                    "probes": [
                        {"level": p.level, "ratio": p.ratio, "sampled_ids": list(p.sampled_ids),
                         "d": p.d, "consensus": p.consensus}
                        for p in fl.probes
                    ],
                }
                for fl in self.frames
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def discretize_ratio(true_ratio: float, ratio_grid: Sequence[float]) -> float:
    """Smallest grid ratio not below ``true_ratio`` (1.0 if none)."""
    for r in ratio_grid:
        if r >= true_ratio - 1e-9:
            return float(r)
    return 1.0


def a2cp_run(
    frames: Sequence[FrameBundle],
    model: FusionModel,
    consensus_cfg: ConsensusConfig,
    ratio_grid: Sequence[float] = (0.0, 0.2, 0.4, 0.6, 0.8),
    budget: int = 5,
    confidence: float = 0.99,
    rng_seed: int = 0,
    true_ratio: float | None = None,
    order: Literal["round_robin", "lowest_first"] = "round_robin",
    memo: dict | None = None,
) -> A2CPResult:
    """Probe frame by frame until every level is saturated or the scene ends.

    ``frames_to_final`` is the index of the last frame whose probes changed
    the estimate (0 if it never changed). ``memo`` maps frame ids to
    per-frame distance caches and may be shared by runs over the same scene.
    """
    if not frames:
        raise ValueError("empty scene")
    team_size = len(frames[0].teammates)
    state = ProbeState.create(ratio_grid, team_size, budget, confidence, order)
    logs: list[FrameProbeLog] = []
    frames_to_final = 0
    for index, fb in enumerate(frames):
        if state.saturated:
            break
        before = state.estimate
        frame_memo = None if memo is None else memo.setdefault(fb.frame_id, {})
        fl = a2cp_step(state, fb, model, consensus_cfg, frame_rng(rng_seed, fb.frame_id), frame_memo)
        logs.append(fl)
        if state.estimate != before:
            frames_to_final = index
    total = sum(len(fl.probes) for fl in logs)
    success = None
    if true_ratio is not None:
        success = abs(state.estimate - discretize_ratio(true_ratio, ratio_grid)) < 1e-9
    return A2CPResult(
        estimate=state.estimate,
        frames_to_final=frames_to_final,
        total_steps=total,
        success=success,
        true_ratio=true_ratio,
        frames=logs,
    )
