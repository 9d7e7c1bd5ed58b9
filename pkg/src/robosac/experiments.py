"""Seeded experiment runners that turn simulated scenes into result tables.

Each ``run_*`` function takes an :class:`ExperimentSpec` and returns an
:class:`ExperimentResult` holding one or more tables (lists of flat dicts),
plot-ready data series and a list of named checks. Tables are written as CSV
or JSON with :func:`write_result`; re-running with the same spec reproduces
the files byte for byte.

Repeats share one scene per attacker count and differ only in the sampling
seed, so fused outputs and distances are cached across repeats.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from robosac.a2cp import a2cp_run
from robosac.detection import ConsensusConfig
from robosac.engine import EngineConfig, FrameBundle, robosac_frame, robosac_sequence
from robosac.sampling import SamplingPlan, sampling_budget
from robosac.sim import (
    AttackConfig,
    ScenarioConfig,
    SimulatedFusion,
    SimWorldFrame,
    calibrate_severity,
    evaluate_frame,
    generate_scene,
    make_messages,
)

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "Check",
    "TABLE1_ROWS",
    "default_spec",
    "repeat_seed",
    "run_validate_bounds",
    "run_tradeoff",
    "run_estimation",
    "run_modes",
    "run_ablation_epsilon",
    "run_calibration",
    "write_result",
    "EXPERIMENTS",
]

# (eta, s) rows of the budget validation table, plus an attacker-free control
TABLE1_ROWS: tuple[tuple[float, int], ...] = (
    (0.0, 3),
    (0.2, 1), (0.2, 2), (0.2, 3), (0.2, 4),
    (0.4, 1), (0.4, 2), (0.4, 3),
    (0.6, 1), (0.6, 2),
    (0.8, 1),
)
UNBOUNDED = 10_000

log = logging.getLogger(__name__)
_REPEAT_KEY = 1 << 29


def repeat_seed(base: int, repeat: int) -> int:
    """Sampling seed of one repeat, derived from the experiment seed."""
    ss = np.random.SeedSequence(base, spawn_key=(_REPEAT_KEY, repeat))
    return int(ss.generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------- spec


def _plan_to_dict(plan: SamplingPlan) -> dict:
    return {
        "attacker_ratio": plan.attacker_ratio,
        "team_size": plan.team_size,
        "sample_size": plan.sample_size,
        "budget": plan.budget,
        "confidence": plan.confidence,
    }


def engine_to_dict(cfg: EngineConfig) -> dict:
    return {
        "plan": _plan_to_dict(cfg.plan),
        "consensus": cfg.consensus.to_dict(),
        "reference": cfg.reference,
        "team_mode": cfg.team_mode,
        "rng_seed": cfg.rng_seed,
        "no_repeat": cfg.no_repeat,
    }


def engine_from_dict(d: dict, scenario: ScenarioConfig) -> EngineConfig:
    p = dict(d.get("plan", {}))
    p.setdefault("team_size", scenario.team_size)
    p.setdefault("attacker_ratio", scenario.attacker_ratio)
    p.setdefault("confidence", 0.99)
    if "budget" not in p:
        p["budget"] = sampling_budget(p["confidence"], p.get("sample_size", 3), p["attacker_ratio"])
    p.setdefault("sample_size", 3)
    plan = SamplingPlan(**p)
    c = d.get("consensus")
    consensus = ConsensusConfig.from_dict({"fov": asdict(scenario.ego_fov), **(c or {})})
    return EngineConfig(
        plan=plan,
        consensus=consensus,
        reference=d.get("reference", "individual"),
        team_mode=d.get("team_mode", "dynamic"),
        rng_seed=d.get("rng_seed", 0),
        no_repeat=d.get("no_repeat", False),
    )


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    scenario: ScenarioConfig
    engine: EngineConfig
    repeats: int = 10
    output_path: str | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario.to_dict(),
            "engine": engine_to_dict(self.engine),
            "repeats": self.repeats,
            "output_path": self.output_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        scenario = ScenarioConfig.from_dict(d.get("scenario", {}))
        return cls(
            name=d["name"],
            scenario=scenario,
            engine=engine_from_dict(d.get("engine", {}), scenario),
            repeats=d.get("repeats", 10),
            output_path=d.get("output_path"),
            workers=d.get("workers", 1),
        )

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(
            self,
            scenario=replace(self.scenario, rng_seed=seed),
            engine=replace(self.engine, rng_seed=seed),
        )


def default_spec(name: str, seed: int = 0, repeats: int | None = None) -> ExperimentSpec:
    """Desk-scale defaults for each experiment: 5 teammates, one attacker, 100 frames."""
    scenario = ScenarioConfig(rng_seed=seed)
    plan = SamplingPlan.for_sample_size(0.2, 5, 3)
    engine = EngineConfig(plan, scenario.consensus_config(), rng_seed=seed)
    defaults = {"estimate-ratio": 20, "calibrate": 1}
    n = repeats if repeats is not None else defaults.get(name, 10)
    return ExperimentSpec(name=name, scenario=scenario, engine=engine, repeats=n)


# ------------------------------------------------------------------ results


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    name: str
    tables: dict[str, list[dict]]
    checks: list[Check] = field(default_factory=list)
    series: dict[str, Any] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> dict:
        return {
            "experiment": self.name,
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "series": self.series,
            "meta": self.meta,
        }


def _fmt(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(round(float(v), 10))
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def write_result(result: ExperimentResult, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """One file per table plus ``summary.json``; returns the written paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for table, rows in sorted(result.tables.items()):
        path = out / f"{result.name}_{table}.{fmt}"
        if fmt == "csv":
            cols: list[str] = []
            for r in rows:
                cols += [k for k in r if k not in cols]
            with open(path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow({k: _fmt(r.get(k, "")) for k in cols})
        else:
            path.write_text(json.dumps(_jsonable(rows), indent=2, sort_keys=True) + "\n")
        written.append(path)
    summary = out / "summary.json"
    summary.write_text(json.dumps(_jsonable(result.summary()), indent=2, sort_keys=True) + "\n")
    written.append(summary)
    return written


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float):
        return round(obj, 10)
    return obj


# ------------------------------------------------------------------- scenes


class _Scene:
    """Worlds of a scene with messages built on first access."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.worlds: list[SimWorldFrame] = generate_scene(cfg)
        self._bundles: list[FrameBundle | None] = [None] * len(self.worlds)

    def __len__(self) -> int:
        return len(self.worlds)

    def __getitem__(self, i: int) -> FrameBundle:
        if self._bundles[i] is None:
            self._bundles[i] = make_messages(self.worlds[i], self.cfg)
        return self._bundles[i]

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def benign(self, fb: FrameBundle) -> list:
        roles = self.worlds[fb.frame_id].roles
        return [m for m in fb.teammates if roles[m.agent_id] == "benign"]

    def clean(self, frame_id: int, ids: Sequence[int]) -> bool:
        roles = self.worlds[frame_id].roles
        return all(roles[i] != "attacker" for i in ids)

    def empty_reference_frames(self) -> list[int]:
        """Frames where the ego detects nothing, so any fused output agrees with it."""
        return [fb.frame_id for fb in self if len(fb.ego.payload.detections) == 0]


@lru_cache(maxsize=16)
def _scene(cfg: ScenarioConfig) -> _Scene:
    scene = _Scene(cfg)
    empty = scene.empty_reference_frames()
    if empty:
        log.warning("scene seed %d: ego detects nothing in frames %s; consensus there is vacuous",
                    cfg.rng_seed, empty)
    return scene


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, optionally over worker processes."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n else float("nan")


def _within(emp: float, exact: float, n: int, k: float = 3.0) -> bool:
    se = _se(exact, n)
    if se == 0.0:
        return abs(emp - exact) < 1e-12
    return abs(emp - exact) <= k * se


def _mean_se(x: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(x, dtype=float)
    if len(a) < 2:
        return float(a.mean()) if len(a) else float("nan"), 0.0
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def _model(spec: ExperimentSpec) -> SimulatedFusion:
    return SimulatedFusion(spec.scenario.merge_iou)


# ----------------------------------------------------------- validate-bounds


def _validate_row(args: tuple[ExperimentSpec, float, int]) -> dict:
    spec, eta, s = args
    S = spec.scenario.team_size
    A = round(eta * S)
    scene = _scene(replace(spec.scenario, attacker_count=A))
    plan = SamplingPlan.for_sample_size(eta, S, s, spec.engine.plan.confidence)
    model = _model(spec)
    memos: dict[int, dict] = {}
    steps, success, clean = [], [], []
    for r in range(spec.repeats):
        cfg = replace(spec.engine, plan=plan, rng_seed=repeat_seed(spec.engine.rng_seed, r))
        for fb in scene:
            out = robosac_frame(
                fb.ego, fb.teammates, model, cfg, budget=UNBOUNDED, frame_id=fb.frame_id,
                memo=memos.setdefault(fb.frame_id, {}),
            )
            steps.append(out.steps_used)
            success.append(out.consensus_reached and out.steps_used <= plan.budget)
            clean.append(out.consensus_reached and scene.clean(fb.frame_id, out.accepted_teammates))
    steps_a = np.array(steps)
    n = len(steps_a)
    rate = float(np.mean(success))
    exact = plan.success_probability_exact()
    capped = float(np.minimum(steps_a, plan.budget).mean())
    expected = plan.expected_steps()
    return {
        "eta": eta,
        "s": s,
        "N": plan.budget,
        "trials": n,
        "avg_steps": float(steps_a.mean()),
        "min_steps": int(steps_a.min()),
        "max_steps": int(steps_a.max()),
        "avg_steps_capped": capped,
        "expected_steps": expected,
        "steps_rel_error": abs(capped - expected) / expected,
        "success_rate": rate,
        "success_exact": exact,
        "success_binomial": plan.success_probability(),
        "success_se": _se(exact, n),
        "within_3se": _within(rate, exact, n),
        "clean_accept_rate": float(np.mean(clean)),
    }


def run_validate_bounds(spec: ExperimentSpec, rows: Sequence[tuple[float, int]] = TABLE1_ROWS) -> ExperimentResult:
    """Sample without a budget and compare the steps taken with the computed budget."""
    table = _map(_validate_row, [(spec, eta, s) for eta, s in rows], spec.workers)
    checks = []
    for r in table:
        tag = f"eta={r['eta']},s={r['s']}"
        checks.append(Check(
            f"success within 3 SE [{tag}]", r["within_3se"],
            f"empirical {r['success_rate']:.4f} vs exact {r['success_exact']:.4f} (se {r['success_se']:.4f})",
        ))
        checks.append(Check(
            f"mean steps within 15% [{tag}]", r["steps_rel_error"] <= 0.15,
            f"capped mean {r['avg_steps_capped']:.3f} vs expected {r['expected_steps']:.3f}",
        ))
    return ExperimentResult(
        "validate-bounds", {"bounds": table}, checks,
        meta={"spec": spec.to_dict(), "unbounded_budget": UNBOUNDED},
    )


# ------------------------------------------------------------------ tradeoff


def _baselines(scene: _Scene, model: SimulatedFusion) -> list[dict]:
    rows = []
    for fb in scene:
        gt = scene.worlds[fb.frame_id].ground_truth
        rows.append({
            "frame_id": fb.frame_id,
            "individual": evaluate_frame(model.predict_individual(fb.ego), gt),
            "all_benign": evaluate_frame(model.predict_fused(fb.ego, scene.benign(fb)), gt),
            "no_defense": evaluate_frame(model.predict_fused(fb.ego, fb.teammates), gt),
        })
    return rows


def _budget_runs(
    spec: ExperimentSpec,
    scene: _Scene,
    plan: SamplingPlan,
    budgets: Sequence[int],
    engine: EngineConfig | None = None,
    memos: dict[int, dict] | None = None,
    ap_cache: dict | None = None,
) -> dict[int, list[list[dict]]]:
    """Per budget, per repeat, per frame: outcome summaries with AP.

    Every budget replays the same per-frame random stream, so a larger budget
    only adds draws after the ones a smaller budget made. ``memos`` and
    ``ap_cache`` may be shared by calls on the same scene whose reference
    output is the same.
    """
    model = _model(spec)
    engine = engine or spec.engine
    memos = {} if memos is None else memos
    ap_cache = {} if ap_cache is None else ap_cache
    runs: dict[int, list[list[dict]]] = {b: [] for b in budgets}
    for r in range(spec.repeats):
        cfg = replace(engine, plan=plan, rng_seed=repeat_seed(engine.rng_seed, r))
        for b in budgets:
            frames = []
            for fb in scene:
                out = robosac_frame(
                    fb.ego, fb.teammates, model, cfg, budget=b, frame_id=fb.frame_id,
                    memo=memos.setdefault(fb.frame_id, {}),
                )
                key = (fb.frame_id, tuple(out.accepted_teammates))
                if key not in ap_cache:
                    ap_cache[key] = evaluate_frame(out.output, scene.worlds[fb.frame_id].ground_truth)
                frames.append({
                    "consensus": out.consensus_reached,
                    "clean": out.consensus_reached and scene.clean(fb.frame_id, out.accepted_teammates),
                    "steps": out.steps_used,
                    "fused_calls": out.fused_calls,
                    **ap_cache[key],
                })
            runs[b].append(frames)
    return runs


def _summ(frames: list[dict]) -> dict:
    n = len(frames)
    return {
        "frames": n,
        "success_rate": sum(f["consensus"] for f in frames) / n,
        "clean_accept_rate": sum(f["clean"] for f in frames) / n,
        "mean_steps": sum(f["steps"] for f in frames) / n,
        "fused_calls_per_frame": sum(f["fused_calls"] for f in frames) / n,
        "ap50": sum(f["ap50"] for f in frames) / n,
        "ap70": sum(f["ap70"] for f in frames) / n,
    }


def _paired(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of ``b - a``."""
    return _mean_se(np.asarray(b, float) - np.asarray(a, float))


def run_tradeoff(
    spec: ExperimentSpec, budgets: Sequence[int] = (1, 3, 5, 7), eta: float = 0.2, s: int = 3
) -> ExperimentResult:
    """Success rate and AP against the per-frame budget, with baselines."""
    S = spec.scenario.team_size
    conf = spec.engine.plan.confidence
    A = round(eta * S)
    scene = _scene(replace(spec.scenario, attacker_count=A))
    model = _model(spec)
    base = _baselines(scene, model)
    plan = SamplingPlan(eta, S, s, max(budgets), conf)
    runs = _budget_runs(spec, scene, plan, budgets)

    budget_rows = []
    checks = []
    for b in budgets:
        flat = [f for rep in runs[b] for f in rep]
        summ = _summ(flat)
        exact = SamplingPlan(eta, S, s, b, conf).success_probability_exact()
        n = summ["frames"]
        row = {"budget": b, "s": s, **summ, "success_exact": exact,
               "success_se": _se(exact, n), "within_3se": _within(summ["success_rate"], exact, n)}
        budget_rows.append(row)
        checks.append(Check(f"success within 3 SE [budget={b}]", row["within_3se"],
                            f"empirical {summ['success_rate']:.4f} vs exact {exact:.4f}"))

    aps = [r["ap50"] for r in budget_rows]
    checks.append(Check("mean AP50 strictly increasing in budget",
                        all(x < y for x, y in zip(aps, aps[1:])), " < ".join(f"{a:.4f}" for a in aps)))
    lower = float(np.mean([f["individual"]["ap50"] for f in base]))
    upper = float(np.mean([f["all_benign"]["ap50"] for f in base]))
    nodef = float(np.mean([f["no_defense"]["ap50"] for f in base]))
    checks.append(Check("AP50 bracketed by individual and all-benign",
                        all(lower <= a <= upper for a in aps), f"[{lower:.4f}, {upper:.4f}]"))

    baseline_rows = [
        {"method": name, "ap50": float(np.mean([f[name]["ap50"] for f in base])),
         "ap70": float(np.mean([f[name]["ap70"] for f in base])), "frames": len(base)}
        for name in ("no_defense", "individual", "all_benign")
    ]

    # ordering at 3 sigma over the scene's frames, ROBOSAC at the largest budget, first repeat
    robo = [f["ap50"] for f in runs[max(budgets)][0]]
    ind = [f["individual"]["ap50"] for f in base]
    nd = [f["no_defense"]["ap50"] for f in base]
    ub = [f["all_benign"]["ap50"] for f in base]
    ordering = []
    for label, a, b, strict in (
        ("no_defense < individual", nd, ind, True),
        ("individual < robosac", ind, robo, True),
        ("robosac <= all_benign", robo, ub, False),
    ):
        m, se = _paired(a, b)
        ok = m > 3 * se if strict else m >= -3 * se
        ordering.append({"comparison": label, "mean_gap": m, "gap_se": se, "z": m / se if se else float("inf") if m > 0 else 0.0, "holds": ok})
        checks.append(Check(f"AP50 ordering {label} at 3 sigma", ok, f"gap {m:.4f} (se {se:.4f})"))

    # computation/performance curve: the (budget, s) pairs that reach the target confidence
    curve_rows = []
    for sc in range(1, S - A + 1):
        n_sc = sampling_budget(conf, sc, eta)
        p = SamplingPlan(eta, S, sc, n_sc, conf)
        flat = [f for rep in _budget_runs(spec, scene, p, (n_sc,))[n_sc] for f in rep]
        summ = _summ(flat)
        curve_rows.append({"s": sc, "budget": n_sc, **summ,
                           "success_exact": p.success_probability_exact(),
                           "success_binomial": p.success_probability()})
    series = {
        "budget_curve": {k: [r[k] for r in budget_rows] for k in ("budget", "success_rate", "ap50", "ap70")},
        "collaborator_curve": {k: [r[k] for r in curve_rows] for k in ("s", "budget", "success_rate", "ap50", "ap70")},
        "bounds": {r["method"]: r["ap50"] for r in baseline_rows},
    }
    return ExperimentResult(
        "tradeoff",
        {"budgets": budget_rows, "baselines": baseline_rows, "ordering": ordering, "collaborators": curve_rows},
        checks, series, {"spec": spec.to_dict(), "no_defense_ap50": nodef},
    )


# ---------------------------------------------------------------- estimation


def _level_success(ratio: float, S: int, grid: Sequence[float], conf: float) -> float:
    """Chance the probe lands on the true level when distances separate perfectly.

    Lower levels always include an attacker; the true level has exactly one
    attacker-free subset, drawn with probability ``1 / C(S, S - A)`` per try.
    """
    from robosac.sampling import a2cp_upper_bounds

    A = round(ratio * S)
    if A == 0 or A == S:
        return 1.0
    bounds = a2cp_upper_bounds(grid, S, conf)
    k = next(i for i, r in enumerate(grid) if abs(r - ratio) < 1e-9)
    q = 1.0 / math.comb(S, S - A)
    return 1.0 - (1.0 - q) ** bounds[k]


def run_estimation(
    spec: ExperimentSpec,
    ratios: Sequence[float] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
    grid: Sequence[float] = (0.0, 0.2, 0.4, 0.6, 0.8),
    budget: int = 5,
    order: str = "round_robin",
) -> ExperimentResult:
    """Aggressive-to-conservative ratio estimation over repeated runs per true ratio."""
    S = spec.scenario.team_size
    conf = spec.engine.plan.confidence
    model = _model(spec)
    rows, runs, checks = [], [], []
    for ratio in ratios:
        scene = _scene(replace(spec.scenario, attacker_count=round(ratio * S)))
        memo: dict = {}
        results = [
            a2cp_run(scene, model, spec.engine.consensus, grid, budget, conf,
                     repeat_seed(spec.engine.rng_seed, r), true_ratio=ratio, order=order, memo=memo)
            for r in range(spec.repeats)
        ]
        est = np.array([x.estimate for x in results])
        steps = np.array([x.total_steps for x in results])
        succ = float(np.mean([x.success for x in results]))
        exact = _level_success(ratio, S, grid, conf)
        n = len(results)
        rows.append({
            "true_ratio": ratio,
            "runs": n,
            "mean_frames_to_final": float(np.mean([x.frames_to_final for x in results])),
            "mean_estimate": float(est.mean()),
            "mean_abs_error": float(np.mean(np.abs(est - ratio))),
            "mean_total_steps": float(steps.mean()),
            "min_total_steps": int(steps.min()),
            "max_total_steps": int(steps.max()),
            "success_rate": succ,
            "success_exact": exact,
            "success_se": _se(exact, n),
            "within_3se": _within(succ, exact, n),
        })
        runs += [{"run": r, **x.to_dict()} for r, x in enumerate(results)]
        checks.append(Check(f"success within 3 SE [ratio={ratio}]", rows[-1]["within_3se"],
                            f"empirical {succ:.3f} vs exact {exact:.3f}"))
    steps = [r["mean_total_steps"] for r in rows if 0 < r["true_ratio"] < 1]
    checks.append(Check("total steps increasing in true ratio",
                        all(a < b for a, b in zip(steps, steps[1:])), " < ".join(f"{x:.1f}" for x in steps)))
    return ExperimentResult(
        "estimate-ratio", {"estimation": rows}, checks,
        {"steps_by_ratio": {"ratio": [r["true_ratio"] for r in rows], "total_steps": [r["mean_total_steps"] for r in rows]}},
        {"spec": spec.to_dict(), "grid": list(grid), "per_frame_budget": budget, "order": order, "runs": runs},
    )


# --------------------------------------------------------------------- modes


def run_modes(spec: ExperimentSpec, eta: float = 0.2, s: int = 3, budget: int = 7) -> ExperimentResult:
    """Dynamic team, static team, and temporal reference, side by side."""
    S = spec.scenario.team_size
    scene = _scene(replace(spec.scenario, attacker_count=round(eta * S)))
    frames = list(scene)
    model = _model(spec)
    plan = SamplingPlan(eta, S, s, budget, spec.engine.plan.confidence)
    exact = plan.success_probability_exact()
    modes = {
        "dynamic": dict(team_mode="dynamic", reference="individual"),
        "static": dict(team_mode="static", reference="individual"),
        "temporal": dict(team_mode="dynamic", reference="temporal"),
    }
    rows = []
    for name, kw in modes.items():
        acc = {"frames": 0, "steps": 0, "fused": 0, "individual": 0, "consensus": 0, "clean": 0, "ap50": 0.0, "ap70": 0.0}
        events = 0
        for r in range(spec.repeats):
            cfg = replace(spec.engine, plan=plan, rng_seed=repeat_seed(spec.engine.rng_seed, r), **kw)
            res = robosac_sequence(frames, model, cfg)
            events += len(res.events)
            for o in res.outcomes:
                ap = evaluate_frame(o, scene.worlds[o.frame_id].ground_truth)
                acc["frames"] += 1
                acc["steps"] += o.steps_used
                acc["fused"] += o.fused_calls
                acc["individual"] += o.individual_calls
                acc["consensus"] += o.consensus_reached
                acc["clean"] += o.consensus_reached and scene.clean(o.frame_id, o.accepted_teammates)
                acc["ap50"] += ap["ap50"]
                acc["ap70"] += ap["ap70"]
        n = acc["frames"]
        rows.append({
            "mode": name,
            "frames": n,
            "steps_per_frame": acc["steps"] / n,
            "fused_calls_per_frame": acc["fused"] / n,
            "individual_calls_per_frame": acc["individual"] / n,
            "model_calls_per_frame": (acc["fused"] + acc["individual"]) / n,
            "success_rate": acc["consensus"] / n,
            "clean_accept_rate": acc["clean"] / n,
            "success_exact_per_frame": exact,
            "ap50": acc["ap50"] / n,
            "ap70": acc["ap70"] / n,
            "trust_revocations": events,
        })
    by = {r["mode"]: r for r in rows}
    checks = [
        Check("static steps per frame < dynamic", by["static"]["steps_per_frame"] < by["dynamic"]["steps_per_frame"],
              f"{by['static']['steps_per_frame']:.3f} vs {by['dynamic']['steps_per_frame']:.3f}"),
        Check("temporal individual calls < individual reference",
              by["temporal"]["individual_calls_per_frame"] < by["dynamic"]["individual_calls_per_frame"],
              f"{by['temporal']['individual_calls_per_frame']:.3f} vs {by['dynamic']['individual_calls_per_frame']:.3f}"),
    ]
    for r in rows:
        checks.append(Check(f"success rate >= 0.9 [{r['mode']}]", r["success_rate"] >= 0.9, f"{r['success_rate']:.4f}"))
    return ExperimentResult("modes", {"modes": rows}, checks, meta={"spec": spec.to_dict(), "budget": budget})


# ---------------------------------------------------------- epsilon ablation


# severity grows with attack effort: 1.0 is the calibrated default, 1.5 half again as strong
ABLATION_ATTACKS: tuple[AttackConfig, ...] = (
    AttackConfig("fp_flood", 1.0), AttackConfig("fp_flood", 1.5),
    AttackConfig("mixed", 1.0), AttackConfig("mixed", 1.5),
)


def run_ablation_epsilon(
    spec: ExperimentSpec,
    epsilons: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5),
    attacks: Sequence[AttackConfig] = ABLATION_ATTACKS,
    eta: float = 0.2,
    s: int = 3,
    budget: int = 7,
) -> ExperimentResult:
    """Success (an attacker-free consensus) and AP per threshold and attack.

    Distances do not depend on the threshold, so each attack's scene is fused
    once and every threshold reads the same cached distances.
    """
    S = spec.scenario.team_size
    conf = spec.engine.plan.confidence
    plan = SamplingPlan(eta, S, s, budget, conf)
    exact = plan.success_probability_exact()
    rows, checks = [], []
    sep_rows = []
    for atk in attacks:
        scene = _scene(replace(spec.scenario, attacker_count=round(eta * S), attack=atk))
        memos: dict[int, dict] = {}
        ap_cache: dict = {}
        for eps in epsilons:
            engine = replace(spec.engine, consensus=replace(spec.engine.consensus, epsilon=eps))
            runs = _budget_runs(spec, scene, plan, (budget,), engine, memos, ap_cache)[budget]
            summ = _summ([f for rep in runs for f in rep])
            rows.append({
                "epsilon": eps, "attack": atk.kind, "severity": atk.severity,
                "frames": summ["frames"],
                "success_rate": summ["clean_accept_rate"],
                "consensus_rate": summ["success_rate"],
                "success_exact": exact,
                "mean_steps": summ["mean_steps"],
                "ap50": summ["ap50"], "ap70": summ["ap70"],
            })
        clean_d, bad_d = _distances(scene, memos)
        q99 = float(np.quantile(clean_d, 0.99)) if clean_d else float("nan")
        q01 = float(np.quantile(bad_d, 0.01)) if bad_d else float("nan")
        sep_rows.append({"attack": atk.kind, "severity": atk.severity,
                         "clean_q99": q99, "attacked_q01": q01,
                         "separating_band": f"({q99:.4f}, {q01:.4f})" if q99 < q01 else "none",
                         **{f"separates_eps_{e}": q99 < e < q01 for e in epsilons}})
    for eps in epsilons:
        cell = [r for r in rows if r["epsilon"] == eps]
        by_kind: dict[str, list[float]] = {}
        for r in cell:
            by_kind.setdefault(r["attack"], []).append(r["success_rate"])
        means = [float(np.mean(v)) for v in by_kind.values()]
        spread = max(means) - min(means)
        checks.append(Check(f"success spread across attack kinds < 0.1 [eps={eps}]", spread < 0.1, f"spread {spread:.4f}"))
    mean_at = {eps: float(np.mean([r["success_rate"] for r in rows if r["epsilon"] == eps])) for eps in epsilons}
    if 0.3 in mean_at:
        checks.append(Check("success rate >= 0.95 at eps=0.3", min(
            r["success_rate"] for r in rows if r["epsilon"] == 0.3) >= 0.95, f"{mean_at[0.3]:.4f}"))
    if 0.3 in mean_at and 0.5 in mean_at:
        checks.append(Check("success at eps=0.5 <= eps=0.3", mean_at[0.5] <= mean_at[0.3],
                            f"{mean_at[0.5]:.4f} vs {mean_at[0.3]:.4f}"))
    return ExperimentResult(
        "ablation-epsilon", {"ablation": rows, "separation": sep_rows}, checks,
        {"success_by_epsilon": {"epsilon": list(epsilons), "success_rate": [mean_at[e] for e in epsilons]}},
        {"spec": spec.to_dict(), "budget": budget},
    )


def _distances(scene: _Scene, memos: dict[int, dict]) -> tuple[list[float], list[float]]:
    clean, bad = [], []
    for fid, memo in sorted(memos.items()):
        for key, val in sorted(memo.items()):
            (clean if scene.clean(fid, key) else bad).append(val[1])
    return clean, bad


# --------------------------------------------------------------- calibration


SUBTLE_SWEEP = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


def run_calibration(
    spec: ExperimentSpec,
    frames: int = 1000,
    sweep_frames: int = 300,
    kinds: Sequence[str] = ("fp_flood", "fn_suppress", "mixed"),
    subtle_sweep: Sequence[float] = SUBTLE_SWEEP,
) -> ExperimentResult:
    """Clean versus attacked distance quantiles for each attack, plus a subtle-attack sweep."""
    eps = spec.engine.consensus.epsilon
    mode = spec.engine.consensus.mode
    base = spec.scenario if spec.scenario.attacker_count else replace(spec.scenario, attacker_count=1)
    rows, checks = [], []
    # the configured attack first, then each reference kind at severity 1
    todo = [base.attack] + [AttackConfig(k, 1.0) for k in kinds if AttackConfig(k, 1.0) != base.attack]
    for atk in todo:
        rep = calibrate_severity(replace(base, attack=atk), eps, frames=frames, mode=mode)
        rows.append({"attack": atk.kind, "severity": atk.severity, **_cal_row(rep)})
        checks.append(Check(f"calibration passes [{atk.kind}@{atk.severity:g}]", rep.passed,
                            f"clean q99 {rep.clean_q99:.4f}, attacked q01 {rep.attacked_q01:.4f}"))
    zero = calibrate_severity(replace(base, attack=AttackConfig(base.attack.kind, 0.0)), eps, frames=sweep_frames, mode=mode)
    rows.append({"attack": base.attack.kind, "severity": 0.0, **_cal_row(zero)})
    checks.append(Check("severity 0 fails calibration", not zero.passed, f"attacked q01 {zero.attacked_q01:.4f}"))

    sweep = []
    for sev in subtle_sweep:
        rep = calibrate_severity(replace(base, attack=AttackConfig("subtle", sev)), eps, frames=sweep_frames, mode=mode)
        sweep.append({"attack": "subtle", "severity": sev, **_cal_row(rep)})
    passing = [r["severity"] for r in sweep if r["passed"]]
    boundary = min(passing) if passing else None
    below = [r for r in sweep if boundary is None or r["severity"] < boundary]
    checks.append(Check("subtle attacks below the boundary fail", bool(below) and not any(r["passed"] for r in below),
                        f"smallest passing severity {boundary}"))
    return ExperimentResult(
        "calibrate", {"calibration": rows, "subtle_sweep": sweep}, checks,
        {"subtle": {"severity": [r["severity"] for r in sweep], "clean_q99": [r["clean_q99"] for r in sweep],
                    "attacked_q01": [r["attacked_q01"] for r in sweep]}},
        {"spec": spec.to_dict(), "subtle_boundary": boundary, "frames": frames, "sweep_frames": sweep_frames},
    )


def _cal_row(rep) -> dict:
    d = rep.to_dict()
    return {k: d[k] for k in ("passed", "epsilon", "clean_q99", "attacked_q01", "clean_mean", "attacked_mean", "frames")}


EXPERIMENTS: dict[str, Callable[[ExperimentSpec], ExperimentResult]] = {
    "validate-bounds": run_validate_bounds,
    "tradeoff": run_tradeoff,
    "estimate-ratio": run_estimation,
    "modes": run_modes,
    "ablation-epsilon": run_ablation_epsilon,
    "calibrate": run_calibration,
}
