import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcvd_locate.config import ConfigError, SceneConfig, load_config, save_config, validate_config
from mcvd_locate.geometry import (
    IDENTITY_QUAT,
    NodeLayout,
    Pose,
    octant_index,
    octant_indices,
    quat_from_axis_angle,
    quat_normalize,
    rotate,
    tx_world_batch,
    tx_world_positions,
    unit,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
nonzero = st.floats(1e-6, 1e6) | st.floats(-1e6, -1e-6)
vec = st.tuples(finite, finite, finite)
quat = st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: np.linalg.norm(q) > 1e-3)


@pytest.mark.parametrize("p, idx", [((1, 2, 3), 0), ((-1, 2, 3), 1), ((0, 0, 1), 0),
                                    ((1, -1, 1), 2), ((-1, -1, -1), 7), ((0, 0, 0), 0)])
def test_octant_index_examples(p, idx):
    assert octant_index(p) == idx


def test_octant_rejects_non_finite():
    with pytest.raises(ValueError):
        octant_index((np.nan, 0, 0))
    with pytest.raises(ValueError):
        octant_index((np.inf, 0, 0))


@given(vec)
def test_octant_total_and_matches_vectorised(p):
    i = octant_index(p)
    assert 0 <= i <= 7
    assert octant_indices(np.array([p]))[0] == i


@given(st.tuples(nonzero, nonzero, nonzero))
def test_octant_negation_involution(p):
    assert octant_index(tuple(-c for c in p)) == 7 - octant_index(p)


@given(quat, vec)
def test_rotation_preserves_norm(q, v):
    q = quat_normalize(q)
    v = np.array(v)
    assert abs(np.linalg.norm(rotate(q, v)) - np.linalg.norm(v)) <= 1e-9 * max(1.0, np.linalg.norm(v))


@given(quat)
def test_normalize_gives_unit_and_rotates_units_to_units(q):
    q = quat_normalize(q)
    assert abs(np.linalg.norm(q) - 1) < 1e-9
    assert abs(np.linalg.norm(rotate(q, unit((1, 2, 3)))) - 1) < 1e-9


def test_unit_norm():
    assert abs(np.linalg.norm(unit((3e-5, 1e7, -2))) - 1) < 1e-12


def test_layout_order():
    lay = NodeLayout(5.0, 0.5)
    np.testing.assert_array_equal(lay.tx_local, 5.5 * np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]))
    with pytest.raises(ValueError):
        NodeLayout(5.0, 0.0)


def test_tx_world_identity():
    tx = tx_world_positions(Pose((20, 0, 0), IDENTITY_QUAT), NodeLayout(5, 0.5))
    np.testing.assert_allclose(tx[0], (25.5, 0, 0))
    np.testing.assert_allclose(tx[1], (14.5, 0, 0))


def test_tx_world_quarter_turn_about_z():
    q = quat_from_axis_angle((0, 0, 1), np.pi / 2)
    tx = tx_world_positions(Pose((0, 0, 0), q), NodeLayout(5, 0.5))
    np.testing.assert_allclose(tx[0], (0, 5.5, 0), atol=1e-12)


@given(quat, vec)
def test_tx_world_rigid_and_invertible(q, p):
    lay = NodeLayout(5, 0.5)
    pose = Pose(p, q)
    tx = tx_world_positions(pose, lay)
    scale = max(1.0, np.linalg.norm(p))
    assert np.allclose(np.linalg.norm(tx - pose.position, axis=1), 5.5, atol=1e-9 * scale)
    np.testing.assert_allclose(pose.to_local(tx), lay.tx_local, atol=1e-9 * scale)


@settings(max_examples=30)
@given(st.lists(st.tuples(quat, vec), min_size=1, max_size=5))
def test_batched_tx_matches_single(poses):
    lay = NodeLayout(5, 0.5)
    ps = [Pose(p, q) for q, p in poses]
    batch = tx_world_batch(np.array([p.position for p in ps]), np.array([p.orientation for p in ps]), lay)
    for b, p in zip(batch, ps):
        np.testing.assert_allclose(b, tx_world_positions(p, lay), atol=1e-6)


def test_pose_separation():
    lay = NodeLayout(5, 0.5)
    Pose((10.6, 0, 0), IDENTITY_QUAT).check_separation(lay)
    with pytest.raises(ValueError):
        Pose((10.5, 0, 0), IDENTITY_QUAT).check_separation(lay)


def test_default_config_valid():
    cfg = SceneConfig()
    assert validate_config(cfg) is cfg
    assert cfg.n_steps == 50_000


def test_config_errors_are_aggregated():
    cfg = SceneConfig(d_min=5.0, dt=0.0)
    with pytest.raises(ConfigError) as e:
        validate_config(cfg)
    assert "d_min must exceed 2r+delta" in e.value.problems
    assert "dt > 0" in e.value.problems


def test_config_dt_equal_window_invalid():
    with pytest.raises(ConfigError, match="T_pilot >= 100\\*dt"):
        validate_config(SceneConfig(dt=5.0))


def test_config_json_round_trip(tmp_path):
    cfg = SceneConfig(N=123, seed=7)
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert set(json.loads(cfg.to_json())) == {
        "r", "D", "N", "delta", "dt", "T_pilot", "bin_width", "cull_radius", "d_min", "d_max", "seed"}


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        SceneConfig.from_dict({"r": 5.0, "radius": 3})
