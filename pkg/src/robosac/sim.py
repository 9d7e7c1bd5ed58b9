"""Output-level multi-agent detection simulator.

A scene is a square world with slowly drifting vehicles (the objects to
detect), an ego agent at the origin and ``S`` teammates at fixed positions.
Every agent detects the objects inside its field-of-view disc with a small
miss rate and positional noise. Attackers share honest detections too, but
each carries an attack effect that the fusion model applies to the fused
output (injected false positives, suppressed true boxes, or displaced boxes),
which is how an adversarial feature perturbation shows up in output space.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from robosac.detection import ConsensusConfig, FieldOfView, average_precision, difference_measure
from robosac.engine import AgentMessage, FrameBundle, RobosacOutcome
from robosac.geometry import LENGTH, SCORE, WIDTH, X, Y, YAW, DetectionSet, normalize_yaw, pairwise_iou

__all__ = [
    "AttackConfig",
    "ScenarioConfig",
    "SimWorldFrame",
    "SimPayload",
    "AttackEffect",
    "SimulatedFusion",
    "CalibrationReport",
    "generate_scene",
    "make_messages",
    "scene_bundles",
    "calibrate_severity",
    "evaluate_frame",
    "EGO_ID",
]

EGO_ID = 0
AttackKind = Literal["fp_flood", "fn_suppress", "mixed", "subtle"]

# severity -> effect scaling
FP_PER_SEVERITY = 10
SUPPRESS_PER_SEVERITY = {"fn_suppress": 0.8, "mixed": 0.5}
SHIFT_PER_SEVERITY = 1.0  # meters along heading
TURN_PER_SEVERITY = 0.1  # radians


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind = "mixed"
    severity: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("fp_flood", "fn_suppress", "mixed", "subtle"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.severity < 0:
            raise ValueError(f"severity must be >= 0, got {self.severity}")


@dataclass(frozen=True)
class ScenarioConfig:
    team_size: int = 5
    attacker_count: int = 1
    object_count: int = 20
    world_extent: float = 100.0
    ego_fov_radius: float = 43.7
    teammate_fov_radius: float | None = None
    benign_position_noise_sigma: float = 0.1
    benign_miss_rate: float = 0.02
    attack: AttackConfig = field(default_factory=AttackConfig)
    frames: int = 100
    rng_seed: int = 0
    min_separation: float = 8.0
    motion_sigma: float = 0.05
    merge_iou: float = 0.5

    def __post_init__(self) -> None:
        if isinstance(self.attack, dict):
            object.__setattr__(self, "attack", AttackConfig(**self.attack))
        if self.team_size < 1:
            raise ValueError("team_size must be >= 1")
        if not 0 <= self.attacker_count <= self.team_size:
            raise ValueError(f"attacker_count must be in [0, {self.team_size}]")
        if self.object_count < 0 or self.frames < 1:
            raise ValueError("object_count must be >= 0 and frames >= 1")
        if self.world_extent <= 0 or self.ego_fov_radius <= 0:
            raise ValueError("world_extent and ego_fov_radius must be positive")
        if not 0 <= self.benign_miss_rate < 1:
            raise ValueError("benign_miss_rate must be in [0, 1)")
        if self.benign_position_noise_sigma < 0 or self.motion_sigma < 0:
            raise ValueError("noise scales must be >= 0")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")

    @property
    def attacker_ratio(self) -> float:
        return self.attacker_count / self.team_size

    @property
    def ego_fov(self) -> FieldOfView:
        return FieldOfView(0.0, 0.0, self.ego_fov_radius)

    def consensus_config(self, epsilon: float = 0.3, mode: str = "ego_fov") -> ConsensusConfig:
        return ConsensusConfig(epsilon=epsilon, mode=mode, fov=self.ego_fov)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "attack" in d and isinstance(d["attack"], dict):
            d["attack"] = AttackConfig(**d["attack"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SimWorldFrame:
    frame_id: int
    ground_truth: DetectionSet
    agent_positions: np.ndarray  # (S + 1, 2); row 0 is the ego
    visible: tuple[np.ndarray, ...]  # object indices seen by each agent
    roles: tuple[str, ...]  # "ego", "benign" or "attacker"

    @property
    def attacker_ids(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == "attacker"]


@dataclass(frozen=True)
class AttackEffect:
    injected: np.ndarray  # (k, 6) false boxes
    suppress_prob: float
    shift: float
    turn: float
    seed: int

    @property
    def active(self) -> bool:
        return len(self.injected) > 0 or self.suppress_prob > 0 or self.shift != 0 or self.turn != 0


class FrameContext:
    """All agents' detections of one frame, shared by that frame's payloads.

    Lets the fusion model compute box overlaps once per frame instead of
    once per sampled subset.
    """

    def __init__(self, detections: Sequence[DetectionSet], merge_iou: float):
        self.boxes = np.vstack([d.data for d in detections]).reshape(-1, 6)
        self.source = np.concatenate(
            [np.full(len(d), a, dtype=int) for a, d in enumerate(detections)]
        ).astype(int)
        self.merge_iou = merge_iou
        self._neighbors: list[list[int]] | None = None

    def neighbors(self) -> list[list[int]]:
        if self._neighbors is None:
            self._neighbors = _neighbor_lists(pairwise_iou(self.boxes, self.boxes), self.merge_iou)
        return self._neighbors


@dataclass(frozen=True)
class SimPayload:
    frame_id: int
    detections: DetectionSet
    attack: AttackEffect | None = None
    context: FrameContext | None = field(default=None, compare=False, repr=False)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


_SCENE_KEY = 1 << 30
_MOTION_KEY = 1 << 30 | 1


def _place_objects(cfg: ScenarioConfig, rng: np.random.Generator, max_tries: int = 20000) -> np.ndarray:
    half = cfg.world_extent / 2
    pts: list[tuple[float, float]] = []
    tries = 0
    while len(pts) < cfg.object_count:
        tries += 1
        if tries > max_tries:
            raise ValueError(
                f"could not place {cfg.object_count} objects {cfg.min_separation} m apart "
                f"in a {cfg.world_extent} m world"
            )
        p = rng.uniform(-half, half, size=2)
        if all(math.dist(p, q) >= cfg.min_separation for q in pts):
            pts.append((float(p[0]), float(p[1])))
    n = cfg.object_count
    boxes = np.zeros((n, 6))
    if n:
        boxes[:, :2] = np.array(pts)
        boxes[:, LENGTH] = rng.uniform(4.0, 5.0, n)
        boxes[:, WIDTH] = rng.uniform(1.8, 2.2, n)
        boxes[:, YAW] = rng.uniform(-math.pi, math.pi, n)
        boxes[:, SCORE] = 1.0
    return boxes


def _step_objects(boxes: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    half = cfg.world_extent / 2
    out = boxes.copy()
    moves = rng.normal(0.0, cfg.motion_sigma, size=(len(out), 2))
    for i in range(len(out)):
        p = out[i, :2] + moves[i]
        p = np.where(p > half, 2 * half - p, p)
        p = np.where(p < -half, -2 * half - p, p)
        others = np.delete(out[:, :2], i, axis=0)
        if len(others) == 0 or np.min(np.hypot(*(others - p).T)) >= cfg.min_separation:
            out[i, :2] = p
    return out


def generate_scene(cfg: ScenarioConfig) -> list[SimWorldFrame]:
    """Seeded, reproducible ground-truth worlds for every frame of a scene."""
    rng = _rng(cfg.rng_seed, _SCENE_KEY)
    boxes = _place_objects(cfg, rng)
    reach = 0.35 * cfg.world_extent
    positions = np.zeros((cfg.team_size + 1, 2))
    positions[1:] = rng.uniform(-reach, reach, size=(cfg.team_size, 2))
    attackers = set((rng.permutation(cfg.team_size)[: cfg.attacker_count] + 1).tolist())
    roles = ("ego",) + tuple(
        "attacker" if i in attackers else "benign" for i in range(1, cfg.team_size + 1)
    )
    radii = np.full(cfg.team_size + 1, cfg.teammate_fov_radius or cfg.ego_fov_radius)
    radii[0] = cfg.ego_fov_radius

    motion = _rng(cfg.rng_seed, _MOTION_KEY)
    frames = []
    for t in range(cfg.frames):
        if t > 0:
            boxes = _step_objects(boxes, cfg, motion)
        dist = np.hypot(
            boxes[None, :, X] - positions[:, None, 0], boxes[None, :, Y] - positions[:, None, 1]
        ) if len(boxes) else np.zeros((cfg.team_size + 1, 0))
        visible = tuple(np.nonzero(dist[a] <= radii[a])[0] for a in range(cfg.team_size + 1))
        frames.append(
            SimWorldFrame(
                frame_id=t,
                ground_truth=DetectionSet(boxes, t),
                agent_positions=positions,
                visible=visible,
                roles=roles,
            )
        )
    return frames


def _detect(frame: SimWorldFrame, agent: int, cfg: ScenarioConfig) -> DetectionSet:
    rng = _rng(cfg.rng_seed, frame.frame_id, agent, 0)
    gt = frame.ground_truth.data[frame.visible[agent]]
    keep = rng.random(len(gt)) >= cfg.benign_miss_rate
    n = len(gt)
    sigma = cfg.benign_position_noise_sigma
    det = gt.copy()
    det[:, :2] += rng.normal(0.0, sigma, size=(n, 2))
    det[:, LENGTH] *= 1 + rng.normal(0.0, 0.02, n)
    det[:, WIDTH] *= 1 + rng.normal(0.0, 0.02, n)
    det[:, YAW] += rng.normal(0.0, 0.02, n)
    det[:, SCORE] = rng.uniform(0.5, 0.95, n)
    return DetectionSet(det[keep], frame.frame_id)


def _attack_effect(frame: SimWorldFrame, agent: int, cfg: ScenarioConfig) -> AttackEffect:
    rng = _rng(cfg.rng_seed, frame.frame_id, agent, 1)
    atk = cfg.attack
    fov = cfg.ego_fov
    n_fp = round(atk.severity * FP_PER_SEVERITY) if atk.kind in ("fp_flood", "mixed") else 0
    injected = np.zeros((0, 6))
    if n_fp:
        # oversample candidates in the ego FoV, keep those clear of objects and each other
        m = 8 * n_fp + 16
        r = fov.radius * np.sqrt(rng.random(m))
        a = rng.uniform(-math.pi, math.pi, m)
        cand = np.column_stack([fov.center_x + r * np.cos(a), fov.center_y + r * np.sin(a)])
        gt_xy = frame.ground_truth.centers
        if len(gt_xy):
            clear = np.min(np.hypot(*(cand[:, None, :] - gt_xy[None]).transpose(2, 0, 1)), axis=1)
            cand = cand[clear >= cfg.min_separation / 2]
        chosen: list[np.ndarray] = []
        for p in cand:
            if len(chosen) == n_fp:
                break
            if all(math.dist(p, q) >= cfg.min_separation / 2 for q in chosen):
                chosen.append(p)
        k = len(chosen)
        injected = np.column_stack([
            np.array(chosen).reshape(-1, 2),
            rng.uniform(4.0, 5.0, k),
            rng.uniform(1.8, 2.2, k),
            rng.uniform(-math.pi, math.pi, k),
            rng.uniform(0.9, 1.0, k),
        ])
    suppress = min(1.0, atk.severity * SUPPRESS_PER_SEVERITY.get(atk.kind, 0.0))
    shift = atk.severity * SHIFT_PER_SEVERITY if atk.kind == "subtle" else 0.0
    turn = atk.severity * TURN_PER_SEVERITY if atk.kind == "subtle" else 0.0
    seed = int(rng.integers(0, 2**63))
    return AttackEffect(injected, suppress, shift, turn, seed)


def make_messages(frame: SimWorldFrame, cfg: ScenarioConfig) -> FrameBundle:
    """Per-agent messages for one frame; each agent draws from its own substream."""
    dets = [_detect(frame, agent, cfg) for agent in range(len(frame.roles))]
    ctx = FrameContext(dets, cfg.merge_iou)
    msgs = []
    for agent, role in enumerate(frame.roles):
        effect = _attack_effect(frame, agent, cfg) if role == "attacker" else None
        msgs.append(AgentMessage(agent, SimPayload(frame.frame_id, dets[agent], effect, ctx)))
    return FrameBundle(frame.frame_id, msgs[0], tuple(msgs[1:]))


def scene_bundles(cfg: ScenarioConfig) -> tuple[list[SimWorldFrame], list[FrameBundle]]:
    frames = generate_scene(cfg)
    return frames, [make_messages(f, cfg) for f in frames]


class SimulatedFusion:
    """Late-fusion stand-in for a collaborative detector.

    Detections from all contributing agents are merged greedily: in
    descending score order, each unclaimed box absorbs the unclaimed boxes of
    other agents that overlap it with IoU above ``merge_iou``. A merged box
    averages the geometry of its members and scores
    ``1 - prod(1 - score_i)``, so agreement between agents raises confidence.
    Attack effects carried by attacker messages are then applied in agent id
    order.

    Stateless apart from ``merge_iou``, so one instance may serve many
    threads.
    """

    def __init__(self, merge_iou: float = 0.5):
        self.merge_iou = merge_iou

    def predict_individual(self, ego: AgentMessage) -> DetectionSet:
        return ego.payload.detections

    def predict_fused(self, ego: AgentMessage, teammates: Sequence[AgentMessage]) -> DetectionSet:
        if not teammates:
            return self.predict_individual(ego)
        msgs = [ego, *sorted(teammates, key=lambda m: m.agent_id)]
        ctx = ego.payload.context
        if (
            ctx is not None
            and ctx.merge_iou == self.merge_iou
            and all(m.payload.context is ctx for m in msgs)
        ):
            allowed = np.isin(ctx.source, [m.agent_id for m in msgs])
            fused = _merge(ctx.boxes, ctx.source, ctx.neighbors(), allowed)
        else:
            parts = [m.payload.detections.data for m in msgs]
            boxes = np.vstack(parts)
            source = np.concatenate([np.full(len(p), k) for k, p in enumerate(parts)])
            neighbors = _neighbor_lists(pairwise_iou(boxes, boxes), self.merge_iou)
            fused = _merge(boxes, source, neighbors, np.ones(len(boxes), dtype=bool))
        for m in msgs[1:]:
            effect = m.payload.attack
            if effect is not None and effect.active:
                fused = _apply_attack(fused, effect)
        fused[:, YAW] = normalize_yaw(fused[:, YAW])
        return DetectionSet._wrap(fused, ego.payload.frame_id)


def _neighbor_lists(iou: np.ndarray, merge_iou: float) -> list[list[int]]:
    """For each box, the other boxes overlapping it above ``merge_iou``, best first."""
    out = []
    for i in range(iou.shape[0]):
        row = iou[i]
        cand = np.nonzero(row > merge_iou)[0]
        cand = cand[cand != i]
        out.append(cand[np.argsort(-row[cand], kind="stable")].tolist())
    return out


def _merge(
    boxes: np.ndarray, source: np.ndarray, neighbors: list[list[int]], allowed: np.ndarray
) -> np.ndarray:
    idx = np.nonzero(allowed)[0]
    if idx.size == 0:
        return np.zeros((0, 6))
    order = idx[np.argsort(-boxes[idx, SCORE], kind="stable")].tolist()
    rows = boxes.tolist()
    ok = allowed.tolist()
    src = source.tolist()
    claimed = [False] * len(rows)
    out = []
    for i in order:
        if claimed[i]:
            continue
        claimed[i] = True
        members = [i]
        used = {src[i]}
        for j in neighbors[i]:
            if ok[j] and not claimed[j] and src[j] not in used:
                members.append(j)
                used.add(src[j])
                claimed[j] = True
        if len(members) == 1:
            out.append(rows[i])
            continue
        group = [rows[m] for m in members]
        k = len(group)
        miss = 1.0
        for g in group:
            miss *= 1.0 - g[SCORE]
        out.append([
            sum(g[X] for g in group) / k,
            sum(g[Y] for g in group) / k,
            sum(g[LENGTH] for g in group) / k,
            sum(g[WIDTH] for g in group) / k,
            math.atan2(sum(math.sin(g[YAW]) for g in group), sum(math.cos(g[YAW]) for g in group)),
            1.0 - miss,
        ])
    return np.array(out, dtype=float).reshape(-1, 6)


def _apply_attack(fused: np.ndarray, effect: AttackEffect) -> np.ndarray:
    out = fused.copy()
    if effect.shift or effect.turn:
        out[:, X] += effect.shift * np.cos(out[:, YAW])
        out[:, Y] += effect.shift * np.sin(out[:, YAW])
        out[:, YAW] = normalize_yaw(out[:, YAW] + effect.turn)
    if effect.suppress_prob > 0:
        u = np.random.default_rng(effect.seed).random(len(out))
        out = out[u >= effect.suppress_prob]
    if len(effect.injected):
        out = np.vstack([out, effect.injected])
    return out


def evaluate_frame(outcome: RobosacOutcome | DetectionSet, gt: DetectionSet) -> dict[str, float]:
    output = outcome.output if isinstance(outcome, RobosacOutcome) else outcome
    return {
        "ap50": average_precision(output, gt, 0.5),
        "ap70": average_precision(output, gt, 0.7),
    }


@dataclass
class CalibrationReport:
    passed: bool
    epsilon: float
    clean_q99: float
    attacked_q01: float
    clean_d: np.ndarray
    attacked_d: np.ndarray
    attack: AttackConfig
    frames: int

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "epsilon": self.epsilon,
            "clean_q99": self.clean_q99,
            "attacked_q01": self.attacked_q01,
            "clean_mean": float(np.mean(self.clean_d)),
            "attacked_mean": float(np.mean(self.attacked_d)),
            "attack": asdict(self.attack),
            "frames": self.frames,
        }


def calibrate_severity(
    cfg: ScenarioConfig,
    epsilon: float = 0.3,
    target_separation: float = 0.0,
    sample_size: int = 3,
    frames: int = 1000,
    mode: str = "ego_fov",
) -> CalibrationReport:
    """Compare difference-measure distributions of clean and attacked fusions.

    Each frame fuses the ego with a random all-benign subset and with a random
    subset containing at least one attacker. Passes when the clean 99th
    percentile sits below ``epsilon - target_separation`` and the attacked
    1st percentile above ``epsilon + target_separation``.
    """
    if cfg.attacker_count < 1:
        raise ValueError("calibration needs at least one attacker")
    benign_needed = min(sample_size, cfg.team_size - cfg.attacker_count)
    scene_cfg = replace(cfg, frames=frames)
    worlds = generate_scene(scene_cfg)
    model = SimulatedFusion(cfg.merge_iou)
    ccfg = ConsensusConfig(epsilon=epsilon, mode=mode, fov=cfg.ego_fov)
    pick = _rng(cfg.rng_seed, 1 << 30 | 2)
    clean, attacked = [], []
    for w in worlds:
        fb = make_messages(w, scene_cfg)
        ref = model.predict_individual(fb.ego)
        benign = [m for m in fb.teammates if w.roles[m.agent_id] == "benign"]
        bad = [m for m in fb.teammates if w.roles[m.agent_id] == "attacker"]
        sub = [benign[i] for i in pick.choice(len(benign), benign_needed, replace=False)] if benign_needed else []
        clean.append(difference_measure(model.predict_fused(fb.ego, sub), ref, ccfg))
        first = bad[int(pick.integers(len(bad)))]
        rest = [m for m in fb.teammates if m.agent_id != first.agent_id]
        k = min(sample_size, cfg.team_size) - 1
        extra = [rest[i] for i in pick.choice(len(rest), k, replace=False)] if k > 0 else []
        attacked.append(difference_measure(model.predict_fused(fb.ego, [first, *extra]), ref, ccfg))
    clean_d = np.array(clean)
    attacked_d = np.array(attacked)
    q99 = float(np.quantile(clean_d, 0.99))
    q01 = float(np.quantile(attacked_d, 0.01))
    passed = q99 < epsilon - target_separation and q01 > epsilon + target_separation
    return CalibrationReport(passed, epsilon, q99, q01, clean_d, attacked_d, cfg.attack, frames)
