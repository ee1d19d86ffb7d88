import math

import numpy as np
import pytest

from pairsel.errors import DegenerateEmbeddingError, FormatError
from pairsel.snapshots import (
    FeatureSequence,
    SimilarityMatrix,
    Snapshot,
    SnapshotSeries,
    aggregate_similarity,
    cosine_similarity,
    load_checkpoint_matrices,
    read_series,
    similarity_matrix,
    write_series,
    write_similarity_series,
)


def _snapshot(k, videos, texts):
    vs = tuple(FeatureSequence(i, "video", v) for i, v in enumerate(videos))
    ts = tuple(FeatureSequence(i, "text", t) for i, t in enumerate(texts))
    return Snapshot(k, vs, ts)


def _random_snapshot(rng, k, n, dim, t_video=3, t_text=2):
    videos = [rng.normal(size=(t_video, dim)) for _ in range(n)]
    texts = [rng.normal(size=(t_text, dim)) for _ in range(n)]
    return _snapshot(k, videos, texts)


# --- cosine and aggregation oracles ---------------------------------------


def test_cosine_known_values():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(np.array([2.0, 0.0]), np.array([5.0, 0.0])) == 1.0
    # 3-4-5 triangle: cos = (3*4 + 4*3) / (5 * 5) = 24/25
    got = cosine_similarity(np.array([3.0, 4.0]), np.array([4.0, 3.0]))
    assert math.isclose(got, 24.0 / 25.0, rel_tol=0, abs_tol=1e-15)


def test_cosine_zero_norm_raises():
    with pytest.raises(DegenerateEmbeddingError):
        cosine_similarity(np.zeros(3), np.ones(3))


def test_cosine_scale_invariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        u = rng.normal(size=4)
        v = rng.normal(size=4)
        base = cosine_similarity(u, v)
        assert abs(cosine_similarity(3.5 * u, v) - base) < 1e-12
        assert abs(cosine_similarity(u, 0.01 * v) - base) < 1e-12


def test_cls_uses_only_row_zero():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(4, 6))
    t = rng.normal(size=(3, 6))
    video = FeatureSequence(0, "video", v)
    text = FeatureSequence(0, "text", t)
    expected = cosine_similarity(v[0], t[0])
    assert aggregate_similarity(video, text, "cls") == expected
    # trailing tokens must not matter
    v2 = v.copy()
    v2[1:] = 99.0
    assert aggregate_similarity(FeatureSequence(0, "video", v2), text, "cls") == expected


def test_mean_matches_pooled_cosine():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(5, 4))
    t = rng.normal(size=(2, 4))
    got = aggregate_similarity(FeatureSequence(0, "video", v), FeatureSequence(0, "text", t), "mean")
    expected = cosine_similarity(v.mean(axis=0), t.mean(axis=0))
    assert math.isclose(got, expected, rel_tol=0, abs_tol=1e-12)


def test_cico_brute_force_oracle():
    """Token-level mode equals the max-then-mean double loop, both directions."""
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.normal(size=(3, 5))
        t = rng.normal(size=(4, 5))
        vh = v / np.linalg.norm(v, axis=1, keepdims=True)
        th = t / np.linalg.norm(t, axis=1, keepdims=True)
        v2t = np.mean([max(float(vh[p] @ th[q]) for q in range(4)) for p in range(3)])
        t2v = np.mean([max(float(vh[p] @ th[q]) for p in range(3)) for q in range(4)])
        expected = 0.5 * (v2t + t2v)
        got = aggregate_similarity(
            FeatureSequence(0, "video", v), FeatureSequence(0, "text", t), "cico"
        )
        assert math.isclose(got, expected, rel_tol=0, abs_tol=1e-12)


def test_aggregate_rejects_unknown_mode():
    seq = FeatureSequence(0, "video", np.ones((1, 2)))
    txt = FeatureSequence(0, "text", np.ones((1, 2)))
    with pytest.raises(ValueError):
        aggregate_similarity(seq, txt, "max")


# --- matrix construction ----------------------------------------------------


@pytest.mark.parametrize("mode", ["cls", "mean", "cico"])
def test_matrix_matches_per_pair_aggregation(mode):
    rng = np.random.default_rng(5)
    snap = _random_snapshot(rng, 0, 6, 4)
    m = similarity_matrix(snap, mode)
    assert m.values.shape == (6, 6)
    for i in range(6):
        for j in range(6):
            expected = aggregate_similarity(snap.video(i), snap.text(j), mode)
            assert math.isclose(m.values[i, j], expected, rel_tol=0, abs_tol=1e-9)


def test_matrix_handles_ragged_token_counts():
    rng = np.random.default_rng(6)
    videos = [rng.normal(size=(t, 4)) for t in (1, 3, 2)]
    texts = [rng.normal(size=(t, 4)) for t in (2, 2, 5)]
    snap = _snapshot(0, videos, texts)
    m = similarity_matrix(snap, "cico")
    for i in range(3):
        for j in range(3):
            expected = aggregate_similarity(snap.video(i), snap.text(j), "cico")
            assert math.isclose(m.values[i, j], expected, rel_tol=0, abs_tol=1e-12)


def test_matrix_zero_norm_names_the_sample():
    videos = [np.ones((2, 3)), np.zeros((2, 3))]
    texts = [np.ones((2, 3)), np.ones((2, 3))]
    snap = _snapshot(0, videos, texts)
    with pytest.raises(DegenerateEmbeddingError) as err:
        similarity_matrix(snap, "mean")
    assert "1" in str(err.value)


def test_modes_disagree_on_structured_input():
    # row 0 aligned, later tokens anti-aligned: cls must differ from mean
    v = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    t = np.array([[1.0, 0.0], [0.0, -1.0], [0.0, -1.0]])
    snap = _snapshot(0, [v], [t])
    cls = similarity_matrix(snap, "cls").values[0, 0]
    mean = similarity_matrix(snap, "mean").values[0, 0]
    assert cls == 1.0
    assert abs(cls - mean) > 0.5


def test_similarity_matrix_values_validated():
    with pytest.raises(ValueError):
        SimilarityMatrix(0, np.array([[0.0, 2.0], [0.0, 0.0]]))  # 2 > 1 + slack
    with pytest.raises(ValueError):
        SimilarityMatrix(0, np.ones((2, 3)))


# --- data model guards -------------------------------------------------------


def test_snapshot_requires_contiguous_ids():
    seqs = (FeatureSequence(0, "video", np.ones((1, 2))), FeatureSequence(2, "video", np.ones((1, 2))))
    texts = (FeatureSequence(0, "text", np.ones((1, 2))), FeatureSequence(1, "text", np.ones((1, 2))))
    with pytest.raises(ValueError):
        Snapshot(0, seqs, texts)


def test_series_requires_checkpoint_zero_and_order():
    rng = np.random.default_rng(8)
    s0 = _random_snapshot(rng, 0, 2, 3)
    s5 = _random_snapshot(rng, 5, 2, 3)
    SnapshotSeries((0, 5), (s0, s5))
    with pytest.raises(ValueError):
        SnapshotSeries((5,), (s5,))
    with pytest.raises(ValueError):
        SnapshotSeries((5, 0), (s5, s0))


def test_feature_sequence_is_immutable():
    seq = FeatureSequence(0, "video", np.ones((2, 2)))
    with pytest.raises(ValueError):
        seq.features[0, 0] = 5.0


# --- persistence --------------------------------------------------------------


def test_series_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    series = SnapshotSeries(
        (0, 3, 7),
        tuple(_random_snapshot(rng, k, 4, 5) for k in (0, 3, 7)),
    )
    write_series(series, tmp_path / "run", aggregation="mean")
    back = read_series(tmp_path / "run")
    assert back == series


def test_read_series_rejects_tampered_manifest(tmp_path):
    rng = np.random.default_rng(10)
    series = SnapshotSeries((0, 2), tuple(_random_snapshot(rng, k, 2, 3) for k in (0, 2)))
    write_series(series, tmp_path / "run")
    manifest = tmp_path / "run" / "manifest.json"
    manifest.write_text(manifest.read_text().replace('"checkpoints": [\n    0,\n    2\n  ]', '"checkpoints": [\n    2,\n    0\n  ]'))
    with pytest.raises(FormatError):
        read_series(tmp_path / "run")


def test_load_checkpoint_matrices_embeddings_and_threads(tmp_path):
    rng = np.random.default_rng(12)
    series = SnapshotSeries(
        (0, 1, 2), tuple(_random_snapshot(rng, k, 5, 4) for k in (0, 1, 2))
    )
    write_series(series, tmp_path / "run", aggregation="cico")
    serial, manifest = load_checkpoint_matrices(tmp_path / "run")
    threaded, _ = load_checkpoint_matrices(tmp_path / "run", threads=8)
    assert manifest["aggregation"] == "cico"
    for a, b in zip(serial, threaded):
        assert a.checkpoint_index == b.checkpoint_index
        assert np.array_equal(a.values, b.values)


def test_load_checkpoint_matrices_similarity_kind(tmp_path):
    rng = np.random.default_rng(13)
    mats = [
        SimilarityMatrix(k, np.clip(rng.normal(scale=0.3, size=(3, 3)), -1, 1))
        for k in (0, 4)
    ]
    write_similarity_series(mats, tmp_path / "sims")
    back, manifest = load_checkpoint_matrices(tmp_path / "sims")
    assert manifest["kind"] == "similarity"
    assert len(back) == 2
    for a, b in zip(mats, back):
        assert np.array_equal(a.values, b.values)


def test_mode_override_changes_result(tmp_path):
    rng = np.random.default_rng(14)
    series = SnapshotSeries((0, 1), tuple(_random_snapshot(rng, k, 3, 4) for k in (0, 1)))
    write_series(series, tmp_path / "run", aggregation="mean")
    mean_mats, _ = load_checkpoint_matrices(tmp_path / "run")
    cls_mats, _ = load_checkpoint_matrices(tmp_path / "run", mode="cls")
    assert not np.array_equal(mean_mats[0].values, cls_mats[0].values)
