"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import math
import time
from dataclasses import replace

import pytest

import test_detection
import test_geometry
import test_sampling
from robosac.a2cp import a2cp_run
from robosac.experiments import (
    default_spec,
    run_calibration,
    run_estimation,
    run_modes,
    run_tradeoff,
    run_validate_bounds,
)
from robosac.sampling import a2cp_upper_bounds, max_collaborators, sampling_budget
from robosac.sim import ScenarioConfig, SimulatedFusion, scene_bundles


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} acceptance {number}: {detail}")
        assert ok, detail

    return emit


BUDGETS = {
    (0.2, 1): 3, (0.2, 2): 5, (0.2, 3): 7, (0.2, 4): 9,
    (0.4, 1): 6, (0.4, 2): 11, (0.4, 3): 19,
    (0.6, 1): 10, (0.6, 2): 27,
    (0.8, 1): 21,
}


def test_budget_table(report):
    t = time.perf_counter()
    got = {k: sampling_budget(0.99, k[1], k[0]) for k in BUDGETS}
    ms = (time.perf_counter() - t) * 1e3
    wrong = {k: v for k, v in got.items() if v != BUDGETS[k]}
    report(1, not wrong and ms < 1.0, f"10 budgets exact, {ms:.3f} ms" + (f", wrong {wrong}" if wrong else ""))


def test_planning_anchors(report):
    s, n = max_collaborators(0.99, 5, 0.1), sampling_budget(0.99, 5, 0.2)
    report(2, s == 4 and n == 12, f"max_collaborators={s}, sampling_budget={n}")


def test_a2cp_bounds_and_extremes(report):
    t = time.perf_counter()
    bounds = a2cp_upper_bounds([0, 0.2, 0.4, 0.6, 0.8], 5, 0.99)
    cfg = ScenarioConfig(frames=20)
    _, hostile = scene_bundles(replace(cfg, attacker_count=5))
    _, friendly = scene_bundles(replace(cfg, attacker_count=0, frames=1))
    model, cc = SimulatedFusion(cfg.merge_iou), cfg.consensus_config()
    memo_h, memo_f = {}, {}
    bad = []
    for seed in range(20):
        h = a2cp_run(hostile, model, cc, rng_seed=seed, memo=memo_h)
        f = a2cp_run(friendly, model, cc, rng_seed=seed, memo=memo_f)
        if (h.total_steps, h.estimate, f.total_steps, f.estimate) != (77, 1.0, 1, 0.0):
            bad.append((seed, h.total_steps, h.estimate, f.total_steps, f.estimate))
    secs = time.perf_counter() - t
    ok = bounds == [1, 9, 19, 27, 21] and sum(bounds) == 77 and not bad and secs < 1.0
    report(3, ok, f"bounds {bounds} (sum {sum(bounds)}), 20 seeds 77/1 probes, {secs:.2f} s"
           + (f", mismatches {bad}" if bad else ""))


def test_budget_validation(report):
    t = time.perf_counter()
    res = run_validate_bounds(default_spec("validate-bounds"))
    secs = time.perf_counter() - t
    rows = {(r["eta"], r["s"]): r for r in res.tables["bounds"]}
    anchors = [abs(rows[(0.4, 3)]["success_exact"] - 0.86) <= 0.04, abs(rows[(0.2, 4)]["success_exact"] - 0.89) <= 0.04]
    failed = [c.name for c in res.checks if not c.passed]
    budgets_ok = all(rows[k]["N"] == v for k, v in BUDGETS.items())
    ok = not failed and all(anchors) and budgets_ok and secs < 30
    report(4, ok, f"{len(BUDGETS)} rows + control within 3 SE and 15% steps, {secs:.1f} s"
           + (f", failed {failed}" if failed else ""))


def test_tradeoff(report):
    t = time.perf_counter()
    res = run_tradeoff(default_spec("tradeoff"))
    secs = time.perf_counter() - t
    rows = res.tables["budgets"]
    exact = [0.4, 0.784, 0.922, 0.972]
    close = all(abs(r["success_exact"] - e) < 5e-4 for r, e in zip(rows, exact))
    wanted = ("success within 3 SE", "mean AP50 strictly increasing", "AP50 bracketed")
    failed = [c.name for c in res.checks if c.name.startswith(wanted) and not c.passed]
    ok = close and not failed and secs < 60
    rates = " ".join(f"{r['success_rate']:.3f}" for r in rows)
    aps = " < ".join(f"{r['ap50']:.3f}" for r in rows)
    report(5, ok, f"success {rates}, AP50 {aps}, {secs:.1f} s" + (f", failed {failed}" if failed else ""))


def test_ratio_estimation(report):
    t = time.perf_counter()
    res = run_estimation(default_spec("estimate-ratio"), ratios=(0.2, 0.4, 0.6, 0.8))
    secs = time.perf_counter() - t
    rows = res.tables["estimation"]
    rates = {r["true_ratio"]: r["success_rate"] for r in rows}
    steps = [r["mean_total_steps"] for r in rows]
    low = {k: v for k, v in rates.items() if v < 0.85}
    increasing = all(a < b for a, b in zip(steps, steps[1:]))
    ok = not low and increasing and rows[0]["runs"] == 20 and secs < 60
    report(6, ok, f"success {rates}, steps {' < '.join(f'{x:.1f}' for x in steps)}, {secs:.1f} s"
           + (f", below 0.85 at {sorted(low)}" if low else ""))


def test_property_suites(report):
    suites = [
        test_detection.test_match_equals_permutation_optimum_on_1000_instances,
        test_geometry.test_random_pairs_against_monte_carlo,
        test_sampling.test_round_trip_sweep_ten_thousand_points,
        test_detection.test_difference_in_unit_interval,
        test_detection.test_difference_nonincreasing_in_matched_iou,
    ]
    failed = []
    for fn in suites:
        try:
            fn()
        except AssertionError as exc:
            failed.append(f"{fn.__name__}: {exc}")
    report(7, not failed, f"{len(suites) - len(failed)}/{len(suites)} property suites hold"
           + (f", failed {failed}" if failed else ""))


def test_orderings(report):
    trade = run_tradeoff(default_spec("tradeoff"))
    order = {r["comparison"]: r for r in trade.tables["ordering"]}
    modes = {r["mode"]: r for r in run_modes(default_spec("modes")).tables["modes"]}
    ap_ok = all(r["holds"] for r in order.values()) and all(r["z"] > 3 for k, r in order.items() if "<=" not in k)
    static_ok = modes["static"]["steps_per_frame"] < modes["dynamic"]["steps_per_frame"]
    temporal_ok = modes["temporal"]["individual_calls_per_frame"] < modes["dynamic"]["individual_calls_per_frame"]
    zs = ", ".join(f"{k} z={r['z']:.1f}" for k, r in order.items())
    report(8, ap_ok and static_ok and temporal_ok,
           f"{zs}; steps/frame static {modes['static']['steps_per_frame']:.3f} < dynamic "
           f"{modes['dynamic']['steps_per_frame']:.3f}; individual calls/frame temporal "
           f"{modes['temporal']['individual_calls_per_frame']:.3f} < {modes['dynamic']['individual_calls_per_frame']:.3f}")


def test_calibration_gate(report):
    res = run_calibration(default_spec("calibrate"))
    default = res.tables["calibration"][0]
    boundary = res.meta["subtle_boundary"]
    weak_fail = all(not r["passed"] for r in res.tables["subtle_sweep"] if boundary is not None and r["severity"] < boundary)
    ok = default["passed"] and default["clean_q99"] < 0.3 < default["attacked_q01"] and res.passed
    ok = ok and boundary is not None and math.isclose(boundary, 0.8) and weak_fail
    report(9, ok, f"default q99 {default['clean_q99']:.3f} < 0.3 < q01 {default['attacked_q01']:.3f}; "
           f"subtle attacks fail below severity {boundary}")
