import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mcvd_locate.config import SceneConfig
from mcvd_locate.dataset import (
    COLUMNS,
    HeaderError,
    SplitSpec,
    TruncationError,
    VersionError,
    dataset_paths,
    generate_dataset,
    load_dataset,
    sample_pose,
    save_dataset,
    split,
)
from mcvd_locate.geometry import Pose, octant_indices, tx_world_positions

TINY = SceneConfig(N=100, T_pilot=0.5)


@pytest.fixture(scope="module")
def records():
    return generate_dataset(TINY, 3, 7)


def test_pose_distribution():
    cfg = SceneConfig()
    rng = np.random.default_rng(123)
    poses = [sample_pose(cfg, rng) for _ in range(100_000)]
    P = np.array([p.position for p in poses])
    Q = np.array([p.orientation for p in poses])
    d = np.linalg.norm(P, axis=1)
    assert d.min() >= cfg.d_min and d.max() <= cfg.d_max
    counts = np.bincount(octant_indices(P), minlength=8)
    assert np.all(np.abs(counts / len(P) - 0.125) < 0.005)
    assert stats.chisquare(counts).pvalue > 1e-3
    # samples are canonicalized to w >= 0, so compare against fixed quaternions with w = 0
    for q0 in ([0, 1, 0, 0], [0, 0.6, 0, 0.8]):
        dots = Q @ np.array(q0)
        assert abs(dots.mean()) < 3 * dots.std() / np.sqrt(len(Q))
    assert np.allclose(np.linalg.norm(Q, axis=1), 1)
    assert np.all(Q[:, 0] >= 0)


def test_generate_counts_and_labels(records):
    assert [r.sample_id for r in records] == [0, 1, 2]
    assert len({r.seed_used for r in records}) == 3
    for r in records:
        tx = tx_world_positions(Pose(r.label_position, r.label_quat), TINY.layout)
        np.testing.assert_allclose(r.label_tx, tx, atol=1e-9)
        assert TINY.d_min <= np.linalg.norm(r.label_position) <= TINY.d_max


def test_generate_is_deterministic(records, tmp_path):
    again = generate_dataset(TINY, 3, 7)
    assert again == records
    save_dataset(records, tmp_path / "a", TINY, 7)
    save_dataset(again, tmp_path / "b", TINY, 7)
    assert (tmp_path / "a.data.csv").read_bytes() == (tmp_path / "b.data.csv").read_bytes()


def test_split_sizes():
    tr, va, te = split(np.arange(10))
    assert (len(tr), len(va), len(te)) == (8, 1, 1)


@settings(max_examples=50)
@given(st.integers(1, 500), st.floats(0.05, 0.9), st.floats(0.05, 0.9), st.integers(0, 2**31))
def test_split_partition(n, a, b, seed):
    if a + b >= 0.95:
        return
    spec = SplitSpec(a, b, 1 - a - b, seed)
    parts = split(np.arange(n), spec)
    allids = np.concatenate(parts)
    assert sorted(allids.tolist()) == list(range(n))
    for part, f in zip(parts, (spec.train, spec.val, spec.test)):
        assert abs(len(part) - f * n) <= 1


def test_split_keyed_by_id():
    ids = np.arange(100, 300)
    shuffled = np.random.default_rng(1).permutation(ids)
    for a, b in zip(split(ids), split(shuffled)):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(split(ids)[2], split(ids, SplitSpec(split_seed=1))[2])


def test_split_errors():
    with pytest.raises(ValueError):
        split([])
    with pytest.raises(ValueError):
        SplitSpec(0.9, 0.1, 0.0)


def test_round_trip(tmp_path):
    recs = generate_dataset(SceneConfig(N=50, T_pilot=0.2), 100, 3)
    save_dataset(recs, tmp_path / "ds", SceneConfig(N=50, T_pilot=0.2), 3)
    back, cfg, meta = load_dataset(tmp_path / "ds")
    assert back == recs
    assert cfg == SceneConfig(N=50, T_pilot=0.2)
    assert meta["seed"] == 3 and meta["columns"] == COLUMNS


def test_version_error(records, tmp_path):
    meta_path, _ = save_dataset(records, tmp_path / "ds", TINY, 7)
    meta = json.loads(meta_path.read_text())
    meta["layout_version"] = "mcvd-locate/v999"
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(VersionError):
        load_dataset(tmp_path / "ds")


def test_header_error(records, tmp_path):
    meta_path, _ = save_dataset(records, tmp_path / "ds", TINY, 7)
    meta_path.write_text("{not json")
    with pytest.raises(HeaderError):
        load_dataset(tmp_path / "ds")
    save_dataset(records, tmp_path / "ds", TINY, 7)
    meta = json.loads(meta_path.read_text())
    meta["columns"] = meta["columns"][:-1]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(HeaderError):
        load_dataset(tmp_path / "ds")


@pytest.mark.parametrize("cut", [-10, -1])
def test_truncation_error(records, tmp_path, cut):
    _, data_path = save_dataset(records, tmp_path / "ds", TINY, 7)
    raw = data_path.read_bytes()
    data_path.write_bytes(raw[:cut])
    with pytest.raises(TruncationError):
        load_dataset(tmp_path / "ds")


def test_missing_row_is_truncation(records, tmp_path):
    _, data_path = save_dataset(records, tmp_path / "ds", TINY, 7)
    lines = data_path.read_text().splitlines(keepends=True)
    data_path.write_text("".join(lines[:-1]))
    with pytest.raises(TruncationError):
        load_dataset(tmp_path / "ds")


def test_paths_accept_either_suffix(tmp_path):
    assert dataset_paths(tmp_path / "x.meta.json") == dataset_paths(tmp_path / "x.data.csv")
