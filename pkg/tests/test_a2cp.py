import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_CONSENSUS, ToyModel, toy_frame
from robosac.a2cp import ProbeState, a2cp_run, a2cp_step, discretize_ratio
from robosac.engine import frame_rng

GRID = (0.0, 0.2, 0.4, 0.6, 0.8)


def scene(attackers, frames=40, team=5):
    roles = ["attacker"] * attackers + ["benign"] * (team - attackers)
    return [toy_frame(roles, f) for f in range(frames)]


def level_success(attackers, team=5):
    """Chance of settling on the true level when only attacker-free subsets agree."""
    if attackers in (0, team):
        return 1.0
    bound = ProbeState.create(GRID, team, 5).bounds[GRID.index(attackers / team)]
    q = 1 / math.comb(team, team - attackers)
    return 1 - (1 - q) ** bound


def test_attacker_free_team_settles_in_one_probe():
    for seed in range(10):
        res = a2cp_run(scene(0), ToyModel(), TOY_CONSENSUS, rng_seed=seed, true_ratio=0.0)
        assert (res.estimate, res.total_steps, res.frames_to_final, res.success) == (0.0, 1, 0, True)


@pytest.mark.parametrize("order", ["round_robin", "lowest_first"])
def test_all_attacker_team_uses_every_attempt(order):
    for seed in range(10):
        res = a2cp_run(scene(5), ToyModel(), TOY_CONSENSUS, rng_seed=seed, true_ratio=1.0, order=order)
        assert res.estimate == 1.0 and res.total_steps == 77 and res.success
        assert len(res.frames) == math.ceil(77 / 5)
        assert all(len(f.probes) <= 5 for f in res.frames)


def test_three_of_five_attackers():
    hits = [a2cp_run(scene(3), ToyModel(), TOY_CONSENSUS, rng_seed=s, true_ratio=0.6).estimate for s in range(50)]
    assert np.mean(np.isclose(hits, 0.6)) >= 0.9


@pytest.mark.parametrize("attackers", [1, 2, 3, 4])
def test_success_frequency_matches_closed_form(attackers):
    runs = 300
    ok = [a2cp_run(scene(attackers), ToyModel(), TOY_CONSENSUS, rng_seed=s,
                   true_ratio=attackers / 5).success for s in range(runs)]
    p = level_success(attackers)
    assert abs(np.mean(ok) - p) <= 3 * math.sqrt(p * (1 - p) / runs)


def test_one_attacker_steps_in_range():
    steps = [a2cp_run(scene(1), ToyModel(), TOY_CONSENSUS, rng_seed=s).total_steps for s in range(100)]
    assert 2 <= np.mean(steps) <= 15


def test_off_grid_ratio_rounds_up():
    frames = scene(3, frames=60, team=10)
    est = [a2cp_run(frames, ToyModel(), TOY_CONSENSUS, GRID, rng_seed=s, true_ratio=0.3).estimate for s in range(30)]
    assert np.mean(np.isclose(est, 0.4)) >= 0.9
    assert discretize_ratio(0.3, GRID) == 0.4
    assert discretize_ratio(0.9, GRID) == 1.0


def test_orders_differ_only_in_schedule():
    a = a2cp_run(scene(2), ToyModel(), TOY_CONSENSUS, rng_seed=3, order="round_robin")
    b = a2cp_run(scene(2), ToyModel(), TOY_CONSENSUS, rng_seed=3, order="lowest_first")
    assert a.frames[0].probes[0].level == b.frames[0].probes[0].level == 0
    assert [p.level for p in b.frames[0].probes] == sorted(p.level for p in b.frames[0].probes)


@settings(max_examples=60, deadline=None)
@given(attackers=st.integers(0, 5), seed=st.integers(0, 2**32 - 1), budget=st.integers(1, 8),
       order=st.sampled_from(["round_robin", "lowest_first"]))
def test_probe_invariants(attackers, seed, budget, order):
    frames = scene(attackers, frames=80)
    model = ToyModel()
    state = ProbeState.create(GRID, 5, budget, order=order)
    prev_counters = list(state.counters)
    prev_est = state.estimate
    agreed = []
    total = 0
    for fb in frames:
        if state.saturated:
            break
        log = a2cp_step(state, fb, model, TOY_CONSENSUS, frame_rng(seed, fb.frame_id))
        assert len(log.probes) <= budget
        total += len(log.probes)
        assert all(c >= p for c, p in zip(state.counters, prev_counters))
        assert all(0 <= t <= u for t, u in zip(state.counters, state.bounds))
        assert state.estimate <= prev_est
        agreed += [p.ratio for p in log.probes if p.consensus]
        for p in log.probes:
            assert len(p.sampled_ids) == 5 - round(p.ratio * 5)
        prev_counters, prev_est = list(state.counters), state.estimate
    assert total <= sum(state.bounds)
    assert state.estimate == (min(agreed) if agreed else 1.0)
    assert (total == sum(state.bounds)) == (not agreed)
    k = GRID.index(state.estimate) if state.estimate < 1 else len(GRID)
    assert all(state.counters[j] == state.bounds[j] for j in range(k, len(GRID)))


def test_report_schema():
    res = a2cp_run(scene(1), ToyModel(), TOY_CONSENSUS, rng_seed=0, true_ratio=0.2)
    rec = json.loads(res.to_json())
    assert {"true_ratio", "estimate", "frames_to_final", "total_steps", "per_frame"} <= set(rec)
    assert sum(len(f["probes"]) for f in rec["per_frame"]) == rec["total_steps"]


def test_bad_arguments():
    with pytest.raises(ValueError):
        ProbeState.create(GRID, 5, 0)
    with pytest.raises(ValueError):
        ProbeState.create(GRID, 5, 5, order="random")
    with pytest.raises(ValueError):
        a2cp_run([], ToyModel(), TOY_CONSENSUS)
