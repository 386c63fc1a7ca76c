"""Planner tests: clearance semantics against a point-to-box oracle, loss
shape, and gradients through the whole vision path."""

import numpy as np
import pytest

import dima.numerics as nm
from conftest import make_agent, make_scene, named_arrays
from dima.encoder import encode, init_encoder
from dima.nn import ModelDims
from dima.planner import (
    HORIZON,
    collision_penalty,
    decode_waypoints,
    init_planner,
    plan,
    planning_loss,
)
from dima.world import (
    GridSpec,
    OrientedBox,
    agent_position_at,
    generate_scene,
    point_box_distance,
)

TINY = ModelDims(d=8, heads=2, enc_blocks=1, planner_blocks=1, agent_bank=4,
                 map_bank=6, d_l=8, lm_layers=1, lm_heads=2, n_q=2, context=64,
                 head_hidden=8)
TINY_GRID = GridSpec(2.0, 4.0)


def vision_params(seed=0, dims=TINY):
    rng = np.random.default_rng(seed)
    return init_encoder(rng, dims) | init_planner(rng, dims)


def oracle_penalty(waypoints: np.ndarray, scene, margin: float) -> float:
    total = 0.0
    for i in range(HORIZON):
        t = (i + 1) * scene.dt
        for agent in scene.agents:
            p = agent_position_at(agent, t, scene.dt)
            box = OrientedBox(float(p[0]), float(p[1]), agent.heading,
                              agent.length, agent.width)
            d = point_box_distance(float(waypoints[i, 0]), float(waypoints[i, 1]), box)
            total += max(0.0, margin - d)
    return total


# ---------------------------------------------------------------------------
# plan


def test_plan_emits_six_waypoints_and_a_feature():
    scene = generate_scene("straight", 0)
    params = vision_params()
    toks = encode(scene, params, TINY_GRID, TINY)
    wps, feat = plan(toks, params, TINY)
    assert wps.shape == (6, 2)
    assert feat.shape == (1, TINY.d)
    wps2, _ = plan(toks, params, TINY)
    assert wps.data.tobytes() == wps2.data.tobytes()


def test_zero_projection_weights_give_a_zero_trajectory():
    scene = generate_scene("turn-right", 1)
    params = vision_params()
    params["planner/out/w"] = nm.parameter(np.zeros_like(params["planner/out/w"].data))
    params["planner/out/b"] = nm.parameter(np.zeros_like(params["planner/out/b"].data))
    toks = encode(scene, params, TINY_GRID, TINY)
    wps, _ = plan(toks, params, TINY)
    assert not wps.data.any()


def test_plan_works_without_agents():
    scene = make_scene()
    params = vision_params()
    wps, _ = plan(encode(scene, params, TINY_GRID, TINY), params, TINY)
    assert np.isfinite(wps.data).all()


def test_features_respond_to_token_perturbation():
    scene = generate_scene("straight", 2)
    params = vision_params()
    toks = encode(scene, params, TINY_GRID, TINY)
    base = plan(toks, params, TINY)[1].data.copy()
    bumped = toks.b.data.copy()
    bumped[0, 0] += 1e-2
    toks.b = nm.constant(bumped)
    moved = plan(toks, params, TINY)[1].data
    assert np.abs(moved - base).max() > 0.0


# ---------------------------------------------------------------------------
# collision penalty vs the geometric oracle


def test_penalty_is_zero_without_agents():
    scene = make_scene()
    wps = nm.constant(np.array(scene.ego.gt_trajectory))
    assert collision_penalty(wps, scene).item() == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_penalty_matches_point_to_box_oracle(seed):
    rng = np.random.default_rng(seed)
    scene = generate_scene(["straight", "overtake", "resume-from-stop"][seed % 3], seed)
    for margin in (0.5, 1.0, 2.0):
        wps = rng.uniform(-10, 14, size=(6, 2))
        got = collision_penalty(nm.constant(wps), scene, margin).item()
        # the smoothing epsilon inside the sqrt costs at most 1e-6 per pair
        assert got == pytest.approx(oracle_penalty(wps, scene, margin), abs=2e-5)


def test_penalty_is_zero_iff_all_waypoints_keep_the_margin():
    rng = np.random.default_rng(42)
    checked_zero = checked_hit = 0
    for seed in range(12):
        scene = generate_scene("straight", seed)
        if not scene.agents:
            continue
        wps = rng.uniform(-10, 14, size=(6, 2))
        margin = 1.0
        closest = min(
            point_box_distance(
                float(wps[i, 0]), float(wps[i, 1]),
                OrientedBox(*map(float, agent_position_at(ag, (i + 1) * scene.dt, scene.dt)),
                            ag.heading, ag.length, ag.width))
            for i in range(6) for ag in scene.agents)
        if abs(closest - margin) < 1e-5:
            continue  # skip knife-edge draws
        penalty = collision_penalty(nm.constant(wps), scene, margin).item()
        if closest > margin:
            assert penalty == 0.0
            checked_zero += 1
        else:
            assert penalty > 0.0
            checked_hit += 1
    assert checked_zero and checked_hit


def test_waypoint_through_a_box_is_penalized(lone_agent_scene):
    wps = np.array(lone_agent_scene.ego.gt_trajectory)
    wps[2] = [6.0, 0.0]  # inside the parked car
    penalty = collision_penalty(nm.constant(wps), lone_agent_scene, 1.0).item()
    assert penalty >= 1.0 - 1e-5  # distance ~0 leaves the full margin


def test_doubling_lambda_doubles_the_penalty_exactly(lone_agent_scene):
    raw = np.zeros((6, 2))
    raw[3] = [3.5, 0.0]  # half a metre short of the parked car
    wps = nm.constant(raw)
    l2 = nm.l2_loss(wps, nm.constant(np.array(lone_agent_scene.ego.gt_trajectory))).item()
    single = planning_loss(wps, lone_agent_scene, margin=1.0, lambda_col=1.0).item()
    double = planning_loss(wps, lone_agent_scene, margin=1.0, lambda_col=2.0).item()
    assert single > l2  # the penalty is live in this construction
    assert double - l2 == pytest.approx(2.0 * (single - l2), rel=1e-12)


def test_loss_is_zero_for_the_logged_future_on_generated_scenes():
    # generator guarantees the logged trajectory keeps at least the margin
    for kind in ("straight", "turn-left", "overtake"):
        scene = generate_scene(kind, 5)
        wps = nm.constant(np.array(scene.ego.gt_trajectory))
        assert planning_loss(wps, scene, margin=1.0, lambda_col=1.0).item() == 0.0


def test_planning_loss_is_nonnegative_random_sweep():
    rng = np.random.default_rng(9)
    for seed in range(8):
        scene = generate_scene("overtake", seed)
        wps = nm.constant(rng.uniform(-12, 12, size=(6, 2)))
        assert planning_loss(wps, scene).item() >= 0.0


# ---------------------------------------------------------------------------
# gradients


def test_waypoint_decode_gradient_through_plan():
    scene = generate_scene("straight", 3)
    names, arrays = named_arrays(vision_params(5))
    gt = np.array(scene.ego.gt_trajectory)

    def f(*tensors):
        params = dict(zip(names, tensors))
        toks = encode(scene, params, TINY_GRID, TINY)
        wps, _ = plan(toks, params, TINY)
        return nm.l2_loss(wps, nm.constant(gt))

    assert nm.grad_check(f, arrays, samples=3, seed=4) < 1e-3


def test_full_planning_loss_gradient_with_live_collision_term(lone_agent_scene):
    names, arrays = named_arrays(vision_params(6))

    def f(*tensors):
        params = dict(zip(names, tensors))
        toks = encode(lone_agent_scene, params, TINY_GRID, TINY)
        wps, _ = plan(toks, params, TINY)
        return planning_loss(wps, lone_agent_scene, margin=6.0, lambda_col=0.5)

    # wide margin guarantees active hinges at the untrained waypoints
    params = dict(zip(names, [nm.constant(a) for a in arrays]))
    toks = encode(lone_agent_scene, params, TINY_GRID, TINY)
    wps, _ = plan(toks, params, TINY)
    assert collision_penalty(wps, lone_agent_scene, margin=6.0).item() > 0.0
    assert nm.grad_check(f, arrays, samples=3, seed=5) < 1e-3


def test_decode_waypoints_is_linear_in_the_feature():
    params = vision_params(7)
    f1 = nm.constant(np.random.default_rng(0).standard_normal((1, TINY.d)))
    f2 = nm.constant(2.0 * f1.data)
    w1 = decode_waypoints(f1, params).data
    w2 = decode_waypoints(f2, params).data
    bias = decode_waypoints(nm.constant(np.zeros((1, TINY.d))), params).data
    np.testing.assert_allclose(w2 - bias, 2.0 * (w1 - bias), atol=1e-12)
