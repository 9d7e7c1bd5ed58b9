from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import ks_2samp

from robosac.detection import difference_measure, hungarian_match
from robosac.engine import AgentMessage, EngineConfig, robosac_frame, robosac_sequence
from robosac.geometry import DetectionSet
from robosac.sampling import SamplingPlan
from robosac.sim import (
    AttackConfig,
    ScenarioConfig,
    SimulatedFusion,
    calibrate_severity,
    evaluate_frame,
    generate_scene,
    make_messages,
    scene_bundles,
)

CFG = ScenarioConfig()
MODEL = SimulatedFusion()


@pytest.fixture(scope="module")
def default_scene():
    return scene_bundles(CFG)


def roles_of(world, fb, role):
    return [m for m in fb.teammates if world.roles[m.agent_id] == role]


def test_scene_shape_and_determinism():
    worlds = generate_scene(CFG)
    assert len(worlds) == 100
    assert all(len(w.visible) == 6 and len(w.roles) == 6 for w in worlds)
    again = generate_scene(CFG)
    assert all(np.array_equal(a.ground_truth.data, b.ground_truth.data) for a, b in zip(worlds, again))
    assert all(a.roles == b.roles for a, b in zip(worlds, again))
    other = generate_scene(replace(CFG, rng_seed=1))
    assert not np.array_equal(worlds[0].ground_truth.data, other[0].ground_truth.data)


def test_messages_deterministic():
    w = generate_scene(replace(CFG, frames=3))[2]
    a, b = make_messages(w, CFG), make_messages(w, CFG)
    for x, y in zip((a.ego, *a.teammates), (b.ego, *b.teammates)):
        assert x.payload.detections == y.payload.detections


def test_visibility_and_roles():
    worlds = generate_scene(CFG)
    n = CFG.object_count
    for w in worlds:
        ego = set(w.visible[0].tolist())
        assert ego <= set(range(n)) and len(ego) < n
        assert w.roles == worlds[0].roles
        assert w.roles[0] == "ego" and w.roles.count("attacker") == CFG.attacker_count
        d = np.hypot(*w.ground_truth.centers[w.visible[0]].T) if ego else np.zeros(0)
        assert np.all(d <= CFG.ego_fov_radius)
    gt = worlds[0].ground_truth.centers
    sep = np.hypot(gt[:, None, 0] - gt[None, :, 0], gt[:, None, 1] - gt[None, :, 1])
    assert sep[np.triu_indices(n, 1)].min() >= CFG.min_separation


def test_infeasible_placement_raises():
    with pytest.raises(ValueError):
        generate_scene(ScenarioConfig(object_count=500, world_extent=50, min_separation=8))


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        ScenarioConfig(attacker_count=6)
    with pytest.raises(ValueError):
        ScenarioConfig(benign_miss_rate=1.0)
    with pytest.raises(ValueError):
        AttackConfig("gradient", 1.0)
    with pytest.raises(ValueError):
        AttackConfig("mixed", -1.0)
    cfg = replace(CFG, attack=AttackConfig("subtle", 0.5))
    assert ScenarioConfig.from_json(cfg.to_json()) == cfg


def test_fusion_without_teammates_is_individual(default_scene):
    _, bundles = default_scene
    for fb in bundles[:10]:
        assert MODEL.predict_fused(fb.ego, []) == MODEL.predict_individual(fb.ego)


def test_benign_fusion_keeps_ego_detections(default_scene):
    worlds, bundles = default_scene
    for w, fb in zip(worlds[:30], bundles[:30]):
        ind = MODEL.predict_individual(fb.ego)
        fused = MODEL.predict_fused(fb.ego, roles_of(w, fb, "benign"))
        assert len(fused) >= len(ind)
        assert len(hungarian_match(ind, fused, 0.5)) == len(ind)


def test_context_and_generic_paths_agree(default_scene):
    worlds, bundles = default_scene
    strip = lambda m: AgentMessage(m.agent_id, replace(m.payload, context=None))
    rng = np.random.default_rng(0)
    for fb in bundles[:25]:
        k = int(rng.integers(1, 6))
        sub = [fb.teammates[i] for i in sorted(rng.choice(5, k, replace=False))]
        fast = MODEL.predict_fused(fb.ego, sub)
        slow = MODEL.predict_fused(strip(fb.ego), [strip(m) for m in sub])
        np.testing.assert_allclose(fast.data, slow.data, atol=1e-12)


def test_fusion_is_order_independent(default_scene):
    _, bundles = default_scene
    fb = bundles[4]
    a = MODEL.predict_fused(fb.ego, list(fb.teammates))
    b = MODEL.predict_fused(fb.ego, list(reversed(fb.teammates)))
    assert a == b


def test_attack_effects_on_fused_output(default_scene):
    worlds, bundles = default_scene
    fb, w = bundles[0], worlds[0]
    benign = roles_of(w, fb, "benign")[:2]
    bad = roles_of(w, fb, "attacker")
    clean = MODEL.predict_fused(fb.ego, benign)
    hit = MODEL.predict_fused(fb.ego, benign + bad)
    assert np.sum(hit.scores >= 0.9) > np.sum(clean.scores >= 0.9) or len(hit) < len(clean)
    flood = replace(CFG, attack=AttackConfig("fp_flood", 1.0))
    fb2 = make_messages(generate_scene(replace(flood, frames=1))[0], flood)
    atk = next(m for m in fb2.teammates if m.payload.attack is not None)
    assert len(atk.payload.attack.injected) == 10
    inj = atk.payload.attack.injected
    assert np.all(np.hypot(inj[:, 0], inj[:, 1]) <= CFG.ego_fov_radius)


def test_evaluate_frame_on_ground_truth(default_scene):
    worlds, _ = default_scene
    gt = worlds[0].ground_truth
    assert evaluate_frame(gt, gt) == {"ap50": 1.0, "ap70": 1.0}


def test_ap_orderings_over_100_frames(default_scene):
    worlds, bundles = default_scene
    ind, full, nodef = [], [], []
    for w, fb in zip(worlds, bundles):
        ind.append(evaluate_frame(MODEL.predict_individual(fb.ego), w.ground_truth)["ap50"])
        full.append(evaluate_frame(MODEL.predict_fused(fb.ego, roles_of(w, fb, "benign")), w.ground_truth)["ap50"])
        nodef.append(evaluate_frame(MODEL.predict_fused(fb.ego, fb.teammates), w.ground_truth)["ap50"])
    for lo, hi in ((ind, full), (nodef, ind)):
        gap = np.asarray(hi) - np.asarray(lo)
        assert gap.mean() > 3 * gap.std(ddof=1) / np.sqrt(len(gap))


def test_ap_nondecreasing_in_collaborators(default_scene):
    worlds, bundles = default_scene
    means = []
    for k in range(5):
        aps = [evaluate_frame(MODEL.predict_fused(fb.ego, roles_of(w, fb, "benign")[:k]), w.ground_truth)["ap50"]
               for w, fb in zip(worlds[:40], bundles[:40])]
        means.append(np.mean(aps))
    assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))


def test_full_view_ego_gains_nothing():
    cfg = ScenarioConfig(ego_fov_radius=200.0, teammate_fov_radius=43.7, frames=30, attacker_count=0)
    worlds, bundles = scene_bundles(cfg)
    gain = [
        evaluate_frame(MODEL.predict_fused(fb.ego, fb.teammates), w.ground_truth)["ap50"]
        - evaluate_frame(MODEL.predict_individual(fb.ego), w.ground_truth)["ap50"]
        for w, fb in zip(worlds, bundles)
    ]
    assert all(len(w.visible[0]) == cfg.object_count for w in worlds)
    assert abs(np.mean(gain)) < 0.02


def test_calibration_passes_on_defaults():
    rep = calibrate_severity(CFG, 0.3, frames=1000)
    assert rep.passed, rep.to_dict()
    assert rep.clean_q99 < 0.3 < rep.attacked_q01
    assert len(rep.clean_d) == len(rep.attacked_d) == 1000


def test_calibration_fails_at_zero_and_for_weak_subtle_attacks():
    zero = calibrate_severity(replace(CFG, attack=AttackConfig("mixed", 0.0)), frames=200)
    assert not zero.passed
    weak = calibrate_severity(replace(CFG, attack=AttackConfig("subtle", 0.4)), frames=200)
    # some attacked fusions slip under epsilon and would be accepted
    assert not weak.passed and weak.attacked_q01 < weak.epsilon
    with pytest.raises(ValueError):
        calibrate_severity(replace(CFG, attacker_count=0))


def test_zero_severity_attacker_payload_is_benign():
    cfg = replace(CFG, attack=AttackConfig("mixed", 0.0), frames=5)
    for w in generate_scene(cfg):
        fb = make_messages(w, cfg)
        for m in fb.teammates:
            if w.roles[m.agent_id] == "attacker":
                assert not m.payload.attack.active


def _random_subset_d(cfg, seeds, want_attacker, ccfg):
    out = []
    for seed in seeds:
        c = replace(cfg, rng_seed=seed)
        w = generate_scene(c)[0]
        fb = make_messages(w, c)
        rng = np.random.default_rng(seed)
        while True:
            sub = [fb.teammates[i] for i in rng.choice(5, 3, replace=False)]
            if any(w.roles[m.agent_id] == "attacker" for m in sub) == want_attacker:
                break
        out.append(difference_measure(MODEL.predict_fused(fb.ego, sub), MODEL.predict_individual(fb.ego), ccfg))
    return np.array(out)


def test_zero_severity_attacker_indistinguishable():
    # independent single-frame scenes, so agent placement is not shared between samples
    cfg = replace(CFG, attack=AttackConfig("mixed", 0.0), frames=1)
    ccfg = cfg.consensus_config()
    clean = _random_subset_d(cfg, range(1000, 1300), False, ccfg)
    attacked = _random_subset_d(cfg, range(2000, 2300), True, ccfg)
    assert ks_2samp(clean, attacked).pvalue > 0.01


def test_accepted_sets_are_attacker_free(default_scene):
    worlds, bundles = default_scene
    cfg = EngineConfig(SamplingPlan.for_sample_size(0.2, 5, 3), CFG.consensus_config())
    for w, fb in zip(worlds, bundles):
        out = robosac_frame(fb.ego, fb.teammates, MODEL, cfg, frame_id=fb.frame_id)
        if out.consensus_reached:
            assert all(w.roles[i] == "benign" for i in out.accepted_teammates)


def test_temporal_matches_individual_decisions_on_static_scene():
    cfg = replace(CFG, motion_sigma=0.0, frames=40)
    _, bundles = scene_bundles(cfg)
    eng = EngineConfig(SamplingPlan.for_sample_size(0.2, 5, 3), cfg.consensus_config(), rng_seed=9)
    a = robosac_sequence(bundles, MODEL, eng)
    b = robosac_sequence(bundles, MODEL, replace(eng, reference="temporal"))
    dec = lambda r: [(o.consensus_reached, o.accepted_teammates) for o in r.outcomes[1:]]
    assert dec(a) == dec(b)


def test_detection_set_serialization_of_scene(default_scene):
    worlds, _ = default_scene
    gt = worlds[3].ground_truth
    assert DetectionSet.from_json(gt.to_json()) == gt
