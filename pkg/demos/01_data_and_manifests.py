"""
Synthetic surgical videos, manifests and transcripts
====================================================

Every other demo trains or evaluates on the small synthetic corpus built
here, so it is worth seeing what it contains. Run from the repository root::

    python demos/01_data_and_manifests.py
"""

# %%
# A corpus with narrated and silent videos
# ----------------------------------------
# Each video belongs to one latent concept. Narrated videos carry a spoken
# line per clip; silent videos carry only a title. The concept token
# (``concept-2`` and so on) appears in titles, narrations and the rendered
# frames, which is what lets retrieval and zero-shot evaluation work on it.

import tempfile
from pathlib import Path

import numpy as np

from hiervlp.data import (
    SynthSpec, TranscriptSegment, load_manifest, merge_transcript_segments,
    sample_frame_indices, save_manifest, synthesize_dataset,
)
from hiervlp.frames import AugmentConfig, augment_clip, load_frames

ds = synthesize_dataset(SynthSpec(n_narrative=8, n_silent=4, clips_per_video=3, n_concepts=4), seed=0)
print(ds)
for video in ds.narrative_videos()[:2] + ds.silent_videos()[:1]:
    print(f"{video.video_id:8s} {video.kind.value:9s} {video.title}")
    first = ds.clips_of(video)[0]
    print(f"         {first.clip_id}: {first.narration!r}, {len(first.frame_refs)} frames")

# %%
# Manifests round-trip exactly
# ----------------------------
# The on-disk form is one JSON object per line. Loading validates the schema
# and cross-references (clip -> video, no overlapping clips, narration only
# on narrated videos) and reports the offending line.

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.jsonl"
    save_manifest(ds, path)
    print(path.read_text().splitlines()[0][:100], "...")
    assert load_manifest(path) == ds
    print("round trip ok:", len(path.read_text().splitlines()), "lines")

# %%
# Frames and clip sampling
# ------------------------
# Frame references of the form ``synth:seed:concept:variant:step:frame`` are
# rendered on demand at any resolution. A clip is reduced to a fixed number
# of frames; short clips repeat frames in order.

print("16 frames -> 8:", sample_frame_indices(16, 8))
print(" 3 frames -> 8:", sample_frame_indices(3, 8))

clip = ds.clips_of(ds.narrative_videos()[0])[0]
frames = load_frames(clip.frame_refs[:8], 64)
print("frame stack", frames.shape, frames.dtype, f"range [{frames.min():.2f}, {frames.max():.2f}]")

# The same random crop, flip and colour jitter is applied to every frame of a clip.
view = augment_clip(frames, np.random.default_rng(0), AugmentConfig())
print("augmented view", view.shape, "mean change", round(float(np.abs(view - frames).mean()), 3))

# %%
# Merging transcript fragments
# ----------------------------
# Speech recognisers cut sentences at arbitrary points. Fragments are joined
# when a segment lacks terminal punctuation or the next one opens with a
# linking word.

segments = [
    TranscriptSegment("Now we create the main", 0.0, 1.5),
    TranscriptSegment("incision.", 1.5, 2.4),
    TranscriptSegment("Viscoelastic goes in.", 2.4, 4.0),
    TranscriptSegment("and then we start the rhexis.", 4.0, 6.0),
]
for seg in merge_transcript_segments(segments):
    print(f"[{seg.t_start:4.1f}-{seg.t_end:4.1f}] {seg.text}")
