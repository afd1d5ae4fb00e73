from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from hiervlp.data import (
    ClipRecord, Dataset, SynthSpec, TranscriptSegment, VideoKind, VideoRecord,
    load_manifest, merge_transcript_segments, sample_frame_indices, sample_frames,
    save_manifest, synthesize_dataset,
)
from hiervlp.errors import EmptyInput, IntegrityError, InvalidSpec, MissingFile, SchemaError


def _write(tmp_path, records):
    p = tmp_path / "m.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    return p


def _video(vid="v1", kind="narrative", clip_ids=("c1", "c2"), title="A title"):
    return {"type": "video", "video_id": vid, "kind": kind, "title": title, "clip_ids": list(clip_ids)}


def _clip(cid, vid="v1", t0=0.0, t1=2.0, narration="Some narration.", frames=("a.png",)):
    return {"type": "clip", "clip_id": cid, "video_id": vid, "t_start": t0, "t_end": t1,
            "narration": narration, "frames": list(frames)}


class TestLoadManifest:
    def test_one_video_two_clips(self, tmp_path):
        p = _write(tmp_path, [_video(), _clip("c1"), _clip("c2", t0=2.0, t1=4.0)])
        ds = load_manifest(p)
        assert len(ds.videos) == 1 and len(ds.clips) == 2

    def test_clip_with_unknown_video(self, tmp_path):
        p = _write(tmp_path, [_video(clip_ids=("c1",)), _clip("c1"), _clip("c9", vid="nope")])
        with pytest.raises(IntegrityError):
            load_manifest(p)

    def test_fixture_counts_match_line_count(self, fixture_path, fixture_dataset):
        lines = [json.loads(l) for l in fixture_path.read_text().splitlines()]
        narrative = sum(1 for r in lines if r["type"] == "video" and r["kind"] == "narrative")
        silent = sum(1 for r in lines if r["type"] == "video" and r["kind"] == "silent")
        assert (narrative, silent) == (8, 4)
        assert len(fixture_dataset.narrative_videos()) == narrative
        assert len(fixture_dataset.silent_videos()) == silent
        assert len(fixture_dataset.clips) == sum(1 for r in lines if r["type"] == "clip")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            load_manifest(tmp_path / "absent.jsonl")

    @pytest.mark.parametrize(
        "record, field",
        [
            ({**_clip("c1"), "t_end": "late"}, "t_end"),
            ({k: v for k, v in _clip("c1").items() if k != "frames"}, "frames"),
            ({**_clip("c1"), "frames": []}, "frames"),
            ({**_clip("c1"), "t_end": 0.0}, "t_end"),
            ({**_clip("c1"), "type": "frame"}, "type"),
        ],
    )
    def test_schema_errors_report_line_and_field(self, tmp_path, record, field):
        p = _write(tmp_path, [_video(clip_ids=("c1",)), record])
        with pytest.raises(SchemaError) as exc:
            load_manifest(p)
        assert exc.value.line == 2
        assert exc.value.field == field

    def test_invalid_json_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps(_video(clip_ids=("c1",))) + "\n{not json\n")
        with pytest.raises(SchemaError) as exc:
            load_manifest(p)
        assert exc.value.line == 2

    def test_duplicate_clip_id(self, tmp_path):
        p = _write(tmp_path, [_video(clip_ids=("c1",)), _clip("c1"), _clip("c1")])
        with pytest.raises(IntegrityError):
            load_manifest(p)

    def test_orphan_clip(self, tmp_path):
        p = _write(tmp_path, [_video(clip_ids=("c1",)), _clip("c1"), _clip("c2", t0=3, t1=4)])
        with pytest.raises(IntegrityError, match="orphan"):
            load_manifest(p)

    def test_overlapping_clips(self, tmp_path):
        p = _write(tmp_path, [_video(), _clip("c1", t1=3.0), _clip("c2", t0=2.0, t1=4.0)])
        with pytest.raises(IntegrityError):
            load_manifest(p)

    def test_silent_clip_with_narration(self, tmp_path):
        p = _write(tmp_path, [_video(kind="silent", clip_ids=("c1",)), _clip("c1")])
        with pytest.raises(IntegrityError):
            load_manifest(p)

    def test_narrative_clip_without_narration(self, tmp_path):
        p = _write(tmp_path, [_video(clip_ids=("c1",)), _clip("c1", narration=None)])
        with pytest.raises(IntegrityError):
            load_manifest(p)

    def test_round_trip_fixture(self, tmp_path, fixture_dataset):
        save_manifest(fixture_dataset, tmp_path / "copy.jsonl")
        assert load_manifest(tmp_path / "copy.jsonl") == fixture_dataset


@settings(max_examples=15, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000),
)
def test_manifest_round_trip_is_identity(tmp_path_factory, n_nar, n_sil, clips, concepts, seed):
    ds = synthesize_dataset(SynthSpec(n_nar, n_sil, clips, concepts), seed)
    path = tmp_path_factory.mktemp("rt") / "m.jsonl"
    save_manifest(ds, path)
    assert load_manifest(path) == ds


# -- transcript merging ------------------------------------------------------

def _segs(*triples):
    return [TranscriptSegment(t, a, b) for t, a, b in triples]


def test_merge_without_terminal_punctuation():
    out = merge_transcript_segments(_segs(("The anterior chamber is", 0, 2), ("under-filled.", 2, 4)))
    assert out == _segs(("The anterior chamber is under-filled.", 0, 4))


def test_merge_keeps_complete_sentences():
    segs = _segs(("Incision complete.", 0, 2), ("Next we inject viscoelastic.", 2, 5))
    assert merge_transcript_segments(segs) == segs


def test_merge_on_linking_word():
    # "Done." ends a sentence, but "and" opens the next one, so the rule joins them
    out = merge_transcript_segments(_segs(("Done.", 0, 1), ("and we proceed.", 1, 3)))
    assert out == _segs(("Done. and we proceed.", 0, 3))


def test_merge_custom_linking_words():
    segs = _segs(("Done.", 0, 1), ("and we proceed.", 1, 3))
    assert merge_transcript_segments(segs, linking_words=()) == segs


def test_merge_empty():
    with pytest.raises(EmptyInput):
        merge_transcript_segments([])


_words = st.sampled_from(["cut", "and", "so", "lens", "the", "then", "phaco", "but", "iris"])
_ends = st.sampled_from(["", ".", "?", "!", ","])


@st.composite
def segment_lists(draw):
    n = draw(st.integers(1, 8))
    segs, t = [], 0.0
    for _ in range(n):
        words = draw(st.lists(_words, min_size=1, max_size=4))
        text = " ".join(words) + draw(_ends)
        dur = draw(st.integers(1, 5))
        segs.append(TranscriptSegment(text, t, t + dur))
        t += dur
    return segs


@given(segment_lists())
def test_merge_idempotent(segs):
    once = merge_transcript_segments(segs)
    assert merge_transcript_segments(once) == once


@given(segment_lists())
def test_merge_preserves_span_and_text(segs):
    out = merge_transcript_segments(segs)
    assert out[0].t_start == segs[0].t_start and out[-1].t_end == segs[-1].t_end
    for a, b in zip(out, out[1:]):
        assert a.t_end == b.t_start  # contiguous input stays contiguous, nothing lost or doubled
    strip = lambda s: s.replace(" ", "")
    assert sum(len(strip(s.text)) for s in out) == sum(len(strip(s.text)) for s in segs)


# -- synthesis ---------------------------------------------------------------

def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_manifest(synthesize_dataset(SynthSpec(1, 1, 2, 4), 7), a)
    save_manifest(synthesize_dataset(SynthSpec(1, 1, 2, 4), 7), b)
    assert a.read_bytes() == b.read_bytes()


def test_synth_seed_changes_output():
    assert synthesize_dataset(SynthSpec(2, 1, 2, 2), 1) != synthesize_dataset(SynthSpec(2, 1, 2, 2), 2)


def test_synth_counts():
    ds = synthesize_dataset(SynthSpec(8, 4, 3, 4), 0)
    assert len(ds.videos) == 12 and len(ds.clips) == 36


def test_synth_titles_share_concept_token():
    ds = synthesize_dataset(SynthSpec(8, 4, 3, 4), 0)
    videos = list(ds.videos.values())
    concept = {v.video_id: v.title.split()[0] for v in videos}
    first_frame = {v.video_id: ds.clips_of(v)[0].frame_refs[0].split(":")[2] for v in videos}
    for a in videos:
        for b in videos:
            if first_frame[a.video_id] == first_frame[b.video_id]:
                assert concept[a.video_id] == concept[b.video_id]
                assert concept[a.video_id] in b.title


def test_synth_narrative_vs_silent_text():
    ds = synthesize_dataset(SynthSpec(2, 2, 2, 2), 3)
    assert all(c.narration for v in ds.narrative_videos() for c in ds.clips_of(v))
    assert all(c.narration is None for v in ds.silent_videos() for c in ds.clips_of(v))


@pytest.mark.parametrize("spec", [SynthSpec(0, 1, 1, 1), SynthSpec(1, 1, 0, 1), SynthSpec(1, 1, 1, 0)])
def test_synth_invalid_spec(spec):
    with pytest.raises(InvalidSpec):
        synthesize_dataset(spec, 0)


# -- frame sampling ------------------------------------------------------------

def _clip_with(n):
    return ClipRecord("c", "v", tuple(f"f{i}" for i in range(n)), "x", 0.0, 1.0)


def test_sample_sixteen_to_eight():
    assert sample_frame_indices(16, 8) == [0, 2, 4, 6, 8, 10, 12, 14]


def test_sample_pads_short_clips_in_order():
    assert sample_frames(_clip_with(3), 8) == ["f0", "f0", "f0", "f1", "f1", "f1", "f2", "f2"]


def test_sample_identity():
    assert sample_frames(_clip_with(8), 8) == [f"f{i}" for i in range(8)]


@given(st.integers(1, 64), st.integers(1, 32))
def test_sample_indices_ordered_and_in_range(n_avail, n_frames):
    idx = sample_frame_indices(n_avail, n_frames)
    assert len(idx) == n_frames
    assert idx == sorted(idx) and 0 <= idx[0] and idx[-1] < n_avail


def test_records_validate_directly():
    with pytest.raises(SchemaError):
        VideoRecord("v", VideoKind.NARRATIVE, "  ", ("c",))
    with pytest.raises(SchemaError):
        ClipRecord("c", "v", (), None, 0.0, 1.0)
    ds = Dataset([VideoRecord("v", "silent", "t", ("c",))], [ClipRecord("c", "v", ("f",), None, 0.0, 1.0)])
    assert ds.silent_videos()[0].kind is VideoKind.SILENT
