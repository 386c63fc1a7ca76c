"""Scene tokenizer tests: shape contracts, id binding, FD gradients."""

import numpy as np
import pytest

import dima.numerics as nm
from conftest import make_agent, make_scene, named_arrays
from dima.encoder import (
    AGENT_TARGET_DIM,
    MAP_TARGET_DIM,
    agent_targets,
    decode_agents,
    decode_loss,
    decode_map,
    encode,
    grid_features,
    init_encoder,
    map_targets,
)
from dima.errors import CapacityError
from dima.nn import ModelDims
from dima.world import GridSpec, MapPolyline, generate_scene

TINY = ModelDims(d=8, heads=2, enc_blocks=1, planner_blocks=1, agent_bank=4,
                 map_bank=6, d_l=8, lm_layers=1, lm_heads=2, n_q=2, context=64,
                 head_hidden=8)
TINY_GRID = GridSpec(2.0, 4.0)  # 4x4 cells


def tiny_params(seed=0):
    return init_encoder(np.random.default_rng(seed), TINY)


# ---------------------------------------------------------------------------
# shape and determinism contracts


@pytest.mark.parametrize("kind,seed", [("straight", 0), ("overtake", 1),
                                       ("turn-left", 2), ("three-point-turn", 3)])
def test_token_shapes_follow_the_scene(kind, seed):
    scene = generate_scene(kind, seed)
    dims = ModelDims()
    params = init_encoder(np.random.default_rng(0), dims)
    grid = GridSpec(1.0, 8.0)
    toks = encode(scene, params, grid, dims)
    hw = grid.cells_per_side ** 2
    assert toks.b.shape == (hw, dims.d)
    assert toks.e.shape == (1, dims.d)
    assert toks.a.shape == (len(scene.agents), dims.d)
    assert toks.m.shape == (len(scene.map_lines), dims.d)
    for t in (toks.b, toks.e, toks.a, toks.m):
        assert np.isfinite(t.data).all()


def test_encoding_is_a_pure_function_of_the_scene():
    scene = generate_scene("straight", 7)
    params = tiny_params()
    first = encode(scene, params, TINY_GRID, TINY)
    second = encode(scene, params, TINY_GRID, TINY)
    for a, b in ((first.b, second.b), (first.e, second.e),
                 (first.a, second.a), (first.m, second.m)):
        assert a.data.tobytes() == b.data.tobytes()


def test_feature_cache_path_is_bit_identical():
    scene = generate_scene("overtake", 4)
    params = tiny_params()
    plain = encode(scene, params, TINY_GRID, TINY)
    cached = encode(scene, params, TINY_GRID, TINY,
                    features=grid_features(scene, TINY_GRID))
    assert plain.b.data.tobytes() == cached.b.data.tobytes()
    assert plain.e.data.tobytes() == cached.e.data.tobytes()


def test_agent_overflow_raises_capacity_error():
    agents = [make_agent(agent_id=i, x=6.0 + 5.0 * i) for i in range(5)]
    scene = make_scene(agents=agents)
    with pytest.raises(CapacityError, match="agents"):
        encode(scene, tiny_params(), TINY_GRID, TINY)


def test_map_overflow_raises_capacity_error():
    lines = [MapPolyline(i, "boundary", np.array([[0.0, i], [1.0, i]]))
             for i in range(7)]
    scene = make_scene(map_lines=lines)
    with pytest.raises(CapacityError, match="polylines"):
        encode(scene, tiny_params(), TINY_GRID, TINY)


def test_empty_scene_still_produces_an_ego_token():
    scene = make_scene(map_lines=[])
    toks = encode(scene, tiny_params(), TINY_GRID, TINY)
    assert toks.a.shape == (0, TINY.d)
    assert toks.m.shape == (0, TINY.d)
    assert toks.e.shape == (1, TINY.d) and np.isfinite(toks.e.data).all()


# ---------------------------------------------------------------------------
# query binding by sorted agent id


def test_agent_rows_travel_with_their_ids_under_reordering():
    a5 = make_agent(agent_id=5, x=6.0)
    a2 = make_agent(agent_id=2, x=12.0)
    a9 = make_agent(agent_id=9, x=-8.0)
    params = tiny_params()
    one = encode(make_scene(agents=[a5, a2, a9]), params, TINY_GRID, TINY)
    two = encode(make_scene(agents=[a2, a9, a5]), params, TINY_GRID, TINY)
    by_id_one = {ag.id: one.a.data[i] for i, ag in enumerate([a5, a2, a9])}
    by_id_two = {ag.id: two.a.data[i] for i, ag in enumerate([a2, a9, a5])}
    for agent_id in (2, 5, 9):
        np.testing.assert_array_equal(by_id_one[agent_id], by_id_two[agent_id])


def test_distinct_agents_get_distinct_query_rows():
    agents = [make_agent(agent_id=i, x=6.0 + 4.0 * i) for i in range(3)]
    toks = encode(make_scene(agents=agents), tiny_params(), TINY_GRID, TINY)
    assert not np.array_equal(toks.a.data[0], toks.a.data[1])


# ---------------------------------------------------------------------------
# grid features


def test_grid_features_layout_and_position_code():
    scene = make_scene(map_lines=[])
    feats = grid_features(scene, TINY_GRID)
    n = TINY_GRID.cells_per_side
    assert feats.shape == (n * n, 9)
    assert not feats[:, :3].any()  # empty scene
    u = (np.arange(n) + 0.5) / n
    # row-major: the first n rows share ux = u[0] while uy walks
    np.testing.assert_allclose(feats[:n, 3], u[0])
    np.testing.assert_allclose(feats[:n, 4], u)
    np.testing.assert_allclose(feats[:, 5], np.sin(np.pi * feats[:, 3]))
    np.testing.assert_allclose(feats[:, 8], np.cos(np.pi * feats[:, 4]))


def test_grid_features_embed_the_raster():
    scene = make_scene(agents=[make_agent(x=0.0)], map_lines=[])
    from dima.world import rasterize_bev

    feats = grid_features(scene, TINY_GRID)
    raster = rasterize_bev(scene, TINY_GRID)
    n = TINY_GRID.cells_per_side
    np.testing.assert_array_equal(feats[:, :3], raster.reshape(n * n, 3))


# ---------------------------------------------------------------------------
# auxiliary decoders


def test_agent_targets_encode_pose_box_and_category():
    agent = make_agent(agent_id=0, x=3.0, y=-1.0, heading=np.pi / 2, length=4.4,
                       width=1.9, speed=2.5, category="truck")
    rows = agent_targets(make_scene(agents=[agent]))
    assert rows.shape == (1, AGENT_TARGET_DIM)
    # heading is stored quantized, so derive the trig cells from the field
    np.testing.assert_allclose(
        rows[0],
        [3.0, -1.0, np.cos(agent.heading), np.sin(agent.heading), 4.4, 1.9, 2.5,
         0.0, 1.0, 0.0, 0.0, 3.0, -1.0, 1.0],
        atol=1e-12)


def test_map_targets_encode_kind_and_endpoints():
    line = MapPolyline(0, "crossing", np.array([[1.0, 2.0], [1.5, 2.5], [3.0, 4.0]]))
    rows = map_targets(make_scene(map_lines=[line]))
    assert rows.shape == (1, MAP_TARGET_DIM)
    np.testing.assert_allclose(rows[0], [0.0, 0.0, 1.0, 1.0, 2.0, 3.0, 4.0])


def test_zero_weight_decoders_emit_zeros_of_the_right_shape():
    scene = generate_scene("straight", 2)
    params = tiny_params()
    for name in ("encoder/dec_agent/w", "encoder/dec_agent/b",
                 "encoder/dec_map/w", "encoder/dec_map/b"):
        params[name] = nm.parameter(np.zeros_like(params[name].data))
    toks = encode(scene, params, TINY_GRID, TINY)
    agents_out = decode_agents(params, toks.a)
    maps_out = decode_map(params, toks.m)
    assert agents_out.shape == (len(scene.agents), AGENT_TARGET_DIM)
    assert maps_out.shape == (len(scene.map_lines), MAP_TARGET_DIM)
    assert not agents_out.data.any() and not maps_out.data.any()


def test_decode_loss_is_zero_safe_on_an_empty_scene():
    scene = make_scene(map_lines=[])
    params = tiny_params()
    toks = encode(scene, params, TINY_GRID, TINY)
    assert decode_loss(params, toks, scene).item() == 0.0


# ---------------------------------------------------------------------------
# gradients


def test_token_sum_gradient_matches_finite_differences():
    scene = make_scene(agents=[make_agent(agent_id=1, x=5.0)])
    names, arrays = named_arrays(tiny_params(3))
    # jitter every weight: at exact init the final layer norms make each row
    # sum to zero identically, which would turn this check into 0 == 0
    rng = np.random.default_rng(11)
    arrays = [a + 0.05 * rng.standard_normal(a.shape) for a in arrays]

    def f(*tensors):
        params = dict(zip(names, tensors))
        toks = encode(scene, params, TINY_GRID, TINY)
        total = nm.add(nm.sum_all(toks.b), nm.sum_all(toks.e))
        total = nm.add(total, nm.sum_all(toks.a))
        return nm.add(total, nm.sum_all(toks.m))

    assert nm.grad_check(f, arrays, samples=4, seed=1) < 1e-3


def test_decode_loss_gradient_matches_finite_differences():
    scene = make_scene(agents=[make_agent(agent_id=1, x=5.0)])
    names, arrays = named_arrays(tiny_params(4))

    def f(*tensors):
        params = dict(zip(names, tensors))
        toks = encode(scene, params, TINY_GRID, TINY)
        return decode_loss(params, toks, scene)

    assert nm.grad_check(f, arrays, samples=3, seed=2) < 1e-3
