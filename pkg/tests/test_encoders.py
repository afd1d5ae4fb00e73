from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiervlp.encoders import (
    EncoderBundle, EncoderConfig, Projection, aggregate_backward, aggregate_video,
    load_checkpoint, save_checkpoint, text_features, tokenize,
)
from hiervlp.errors import EmptyList, EmptyText, ShapeMismatch, VersionMismatch
from hiervlp.frames import load_frames
from hiervlp.data import sample_frames

from conftest import DATA, central_difference, max_relative_error, unit_rows


@pytest.fixture(scope="module")
def enc():
    return EncoderBundle(EncoderConfig(image_size=64, seed=0))


@pytest.fixture(scope="module")
def clip_frames(fixture_dataset, enc):
    clip = fixture_dataset.clips["nar000_c00"]
    return load_frames(sample_frames(clip, 8), enc.cfg.image_size)


def test_identical_frames_pool_to_single_frame(enc, clip_frames):
    eight = np.repeat(clip_frames[:1], 8, axis=0)
    np.testing.assert_allclose(enc.encode_clip(eight), enc.encode_clip(clip_frames[:1]), atol=1e-12)


def test_frame_order_does_not_matter(enc, clip_frames):
    perm = np.random.default_rng(0).permutation(len(clip_frames))
    np.testing.assert_allclose(enc.encode_clip(clip_frames[perm]), enc.encode_clip(clip_frames), atol=1e-12)


def test_golden_clip_embedding(fixture_dataset):
    golden = np.load(DATA / "golden_clip_c0.npy")
    got = EncoderBundle(EncoderConfig(image_size=64, seed=0)).encode_record(fixture_dataset.clips["nar000_c00"])
    np.testing.assert_allclose(got, golden, atol=1e-6)


def test_clip_embedding_unit_norm(enc, clip_frames):
    assert abs(np.linalg.norm(enc.encode_clip(clip_frames)) - 1) < 1e-5


def test_mismatched_frame_sizes(enc, clip_frames):
    with pytest.raises(ShapeMismatch):
        enc.encode_clip([clip_frames[0], clip_frames[1][:32]])
    with pytest.raises(ShapeMismatch):
        enc.encode_clip([])


def test_encode_text_deterministic_and_unit(enc):
    a = enc.encode_text("Capsulorhexis with forceps.")
    b = enc.encode_text("Capsulorhexis with forceps.")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1) < 1e-5


def test_text_truncated_to_77_tokens(enc):
    long = " ".join(f"word{i}" for i in range(120))
    short = " ".join(f"word{i}" for i in range(77))
    assert len(tokenize(long)) == 77
    assert np.array_equal(enc.encode_text(long), enc.encode_text(short))


def test_empty_text(enc):
    for bad in ("", "   ", "!!!"):
        with pytest.raises(EmptyText):
            enc.encode_text(bad)
        with pytest.raises(EmptyText):
            enc.encode_query(bad)


def test_concept_token_dominates_text_similarity(enc):
    words = ["phacoemulsification", "incision", "capsulorhexis", "hydrodissection", "irrigation"]
    concept3 = [f"concept-3 {w}" for w in words]
    concept1 = [f"concept-1 {w}" for w in words]
    e3 = enc.encode_texts(concept3)
    e1 = enc.encode_texts(concept1)
    within = e3 @ e3.T
    across = e3 @ e1.T
    for i in range(len(words)):
        others = [within[i, j] for j in range(len(words)) if j != i]
        assert min(others) > across[i].max()


def test_query_encoder_pairwise_similarities(enc, fixture_dataset):
    titles = [v.title for v in fixture_dataset.videos.values()]
    q = np.stack([enc.encode_query(t) for t in titles])
    # recompute with the same frozen weight, one title at a time
    w = enc.params["query.proj"]
    ref = []
    for t in titles:
        u = w @ text_features(t, enc.cfg)
        ref.append(u / np.linalg.norm(u))
    ref = np.stack(ref)
    np.testing.assert_allclose(q @ q.T, ref @ ref.T, atol=1e-12)
    assert np.array_equal(enc.encode_query(titles[0]), enc.encode_query(titles[0]))


def test_query_weight_is_read_only(enc):
    with pytest.raises(ValueError):
        enc.params["query.proj"][0, 0] = 1.0
    assert "query.proj" not in enc.trainable()


def test_aggregate_examples():
    e = np.array([0.6, 0.8])
    np.testing.assert_allclose(aggregate_video([e, e]), e)
    np.testing.assert_allclose(aggregate_video([[1, 0], [0, 1]]), [0.70710678, 0.70710678], atol=1e-8)
    with pytest.raises(EmptyList):
        aggregate_video([])


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_aggregate_permutation_invariant(n, d, seed):
    rng = np.random.default_rng(seed)
    e = unit_rows(rng, n, d)
    perm = rng.permutation(n)
    np.testing.assert_allclose(aggregate_video(e[perm]), aggregate_video(e), atol=1e-12)
    np.testing.assert_allclose(aggregate_video(e[:1]), e[0], atol=1e-12)
    assert abs(np.linalg.norm(aggregate_video(e)) - 1) < 1e-5


def test_projection_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(5, 7))
    x = rng.normal(size=(3, 7))
    target = rng.normal(size=(3, 5))

    def loss(weight):
        out, _ = Projection(weight).forward(x)
        return float(np.sum(out * target))

    out, norms = Projection(w).forward(x)
    analytic = Projection(w).backward(x, out, norms, target)
    assert max_relative_error(analytic, central_difference(loss, [w], 0)) < 1e-5


def test_aggregate_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    e = unit_rows(rng, 4, 6)
    g = rng.normal(size=6)
    f = lambda emb: float(aggregate_video(emb) @ g)
    assert max_relative_error(aggregate_backward(e, g), central_difference(f, [e], 0)) < 1e-5


def test_checkpoint_round_trip_is_bit_exact(tmp_path, enc):
    path = tmp_path / "c.npz"
    save_checkpoint(path, enc, extra_meta={"note": "x"}, extra_arrays={"blob": np.arange(3)})
    back, meta, extra = load_checkpoint(path)
    assert back.cfg == enc.cfg
    for k, v in enc.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert meta["note"] == "x" and meta["config_hash"] == enc.cfg.config_hash()
    assert np.array_equal(extra["blob"], np.arange(3))


def test_checkpoint_version_mismatch(tmp_path, enc, monkeypatch):
    import hiervlp.encoders as encoders

    path = tmp_path / "c.npz"
    monkeypatch.setattr(encoders, "CHECKPOINT_FORMAT", 99)
    save_checkpoint(path, enc)
    monkeypatch.undo()
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)
