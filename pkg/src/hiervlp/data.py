"""Hierarchical video-text dataset: records, manifest I/O, synthesis, transcripts."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, IntegrityError, InvalidSpec, MissingFile, SchemaError

__all__ = [
    "VideoKind",
    "ClipRecord",
    "VideoRecord",
    "Dataset",
    "TranscriptSegment",
    "DEFAULT_LINKING_WORDS",
    "DEFAULT_TERMINAL_PUNCTUATION",
    "load_manifest",
    "save_manifest",
    "merge_transcript_segments",
    "SynthSpec",
    "synthesize_dataset",
    "synthetic_label_names",
    "sample_frame_indices",
    "sample_frames",
]


class VideoKind(str, Enum):
    NARRATIVE = "narrative"
    SILENT = "silent"


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    video_id: str
    frame_refs: tuple[str, ...]
    narration: str | None
    t_start: float
    t_end: float
    # optional per-frame ground truth for downstream evaluation; each entry is
    # a label name or a tuple of names (multi-label)
    frame_labels: tuple[Any, ...] | None = None

    def __post_init__(self) -> None:
        if not self.frame_refs:
            raise SchemaError(None, "frames", f"clip {self.clip_id!r} has no frames")
        if not self.t_start >= 0:
            raise SchemaError(None, "t_start", f"clip {self.clip_id!r}: t_start must be >= 0")
        if not self.t_end > self.t_start:
            raise SchemaError(None, "t_end", f"clip {self.clip_id!r}: t_end must exceed t_start")
        if self.frame_labels is not None and len(self.frame_labels) != len(self.frame_refs):
            raise SchemaError(None, "frame_labels", f"clip {self.clip_id!r}: one label per frame")


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    kind: VideoKind
    title: str
    clip_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.kind, VideoKind):
            object.__setattr__(self, "kind", VideoKind(self.kind))
        if not self.title or not self.title.strip():
            raise SchemaError(None, "title", f"video {self.video_id!r} has an empty title")
        if not self.clip_ids:
            raise SchemaError(None, "clip_ids", f"video {self.video_id!r} has no clips")

    @property
    def is_narrative(self) -> bool:
        return self.kind is VideoKind.NARRATIVE


class Dataset:
    """Immutable collection of videos and their clips.

    Construction validates every cross-record invariant: clips referenced by a
    video exist and point back to it, clips are ordered and non-overlapping,
    narrative clips carry narration and silent clips do not, and no clip is
    left unreferenced.
    """

    def __init__(self, videos: Iterable[VideoRecord], clips: Iterable[ClipRecord]) -> None:
        vids: dict[str, VideoRecord] = {}
        for v in videos:
            if v.video_id in vids:
                raise IntegrityError(f"duplicate video_id {v.video_id!r}")
            vids[v.video_id] = v
        cls: dict[str, ClipRecord] = {}
        for c in clips:
            if c.clip_id in cls:
                raise IntegrityError(f"duplicate clip_id {c.clip_id!r}")
            cls[c.clip_id] = c
        _check_integrity(vids, cls)
        self._videos = MappingProxyType(vids)
        self._clips = MappingProxyType(cls)

    @property
    def videos(self) -> Mapping[str, VideoRecord]:
        return self._videos

    @property
    def clips(self) -> Mapping[str, ClipRecord]:
        return self._clips

    def narrative_videos(self) -> list[VideoRecord]:
        return [v for v in self._videos.values() if v.kind is VideoKind.NARRATIVE]

    def silent_videos(self) -> list[VideoRecord]:
        return [v for v in self._videos.values() if v.kind is VideoKind.SILENT]

    def clips_of(self, video: VideoRecord | str) -> list[ClipRecord]:
        if isinstance(video, str):
            video = self._videos[video]
        return [self._clips[c] for c in video.clip_ids]

    def narrative_clips(self) -> list[ClipRecord]:
        return [c for v in self.narrative_videos() for c in self.clips_of(v)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return dict(self._videos) == dict(other._videos) and dict(self._clips) == dict(other._clips)

    def __repr__(self) -> str:
        return (
            f"Dataset(videos={len(self._videos)}, clips={len(self._clips)}, "
            f"narrative={len(self.narrative_videos())}, silent={len(self.silent_videos())})"
        )


def _check_integrity(videos: Mapping[str, VideoRecord], clips: Mapping[str, ClipRecord]) -> None:
    owner: dict[str, str] = {}
    for v in videos.values():
        prev_end = -math.inf
        prev_start = -math.inf
        for cid in v.clip_ids:
            if cid in owner:
                raise IntegrityError(f"clip {cid!r} listed by both {owner[cid]!r} and {v.video_id!r}")
            owner[cid] = v.video_id
            clip = clips.get(cid)
            if clip is None:
                raise IntegrityError(f"video {v.video_id!r} references unknown clip {cid!r}")
            if clip.video_id != v.video_id:
                raise IntegrityError(f"clip {cid!r} belongs to {clip.video_id!r}, listed by {v.video_id!r}")
            if clip.t_start < prev_start or clip.t_start < prev_end:
                raise IntegrityError(f"clips of video {v.video_id!r} overlap or are out of order at {cid!r}")
            prev_start, prev_end = clip.t_start, clip.t_end
            if v.kind is VideoKind.NARRATIVE and not (clip.narration and clip.narration.strip()):
                raise IntegrityError(f"narrative clip {cid!r} lacks narration")
            if v.kind is VideoKind.SILENT and clip.narration is not None:
                raise IntegrityError(f"silent clip {cid!r} carries narration")
    for cid, clip in clips.items():
        if clip.video_id not in videos:
            raise IntegrityError(f"clip {cid!r} references unknown video {clip.video_id!r}")
        if cid not in owner:
            raise IntegrityError(f"orphan clip {cid!r} not listed by video {clip.video_id!r}")


# ---------------------------------------------------------------------------
# manifest I/O

def _req(rec: dict, key: str, types: type | tuple[type, ...], line: int) -> Any:
    if key not in rec:
        raise SchemaError(line, key, "missing")
    val = rec[key]
    if isinstance(val, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(line, key, "wrong type")
    if not isinstance(val, types):
        raise SchemaError(line, key, "wrong type")
    return val


def _str_list(rec: dict, key: str, line: int) -> tuple[str, ...]:
    val = _req(rec, key, list, line)
    if not all(isinstance(x, str) for x in val):
        raise SchemaError(line, key, "expected a list of strings")
    return tuple(val)


def _parse_frame_labels(raw: Any, line: int) -> tuple[Any, ...] | None:
    if raw is None:
        return None
    if not isinstance(raw, list):
        raise SchemaError(line, "frame_labels", "expected a list")
    out: list[Any] = []
    for item in raw:
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, list) and all(isinstance(x, str) for x in item):
            out.append(tuple(item))
        else:
            raise SchemaError(line, "frame_labels", "entries must be strings or lists of strings")
    return tuple(out)


def load_manifest(path: str | os.PathLike) -> Dataset:
    """Parse a line-delimited JSON manifest; the whole file is rejected on any bad record."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    videos: list[VideoRecord] = []
    clips: list[ClipRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "<record>", f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(lineno, "<record>", "expected an object")
            kind = rec.get("type")
            try:
                if kind == "video":
                    vkind = _req(rec, "kind", str, lineno)
                    if vkind not in ("narrative", "silent"):
                        raise SchemaError(lineno, "kind", f"unknown kind {vkind!r}")
                    videos.append(
                        VideoRecord(
                            video_id=_req(rec, "video_id", str, lineno),
                            kind=VideoKind(vkind),
                            title=_req(rec, "title", str, lineno),
                            clip_ids=_str_list(rec, "clip_ids", lineno),
                        )
                    )
                elif kind == "clip":
                    narration = rec.get("narration", None)
                    if narration is not None and not isinstance(narration, str):
                        raise SchemaError(lineno, "narration", "expected string or null")
                    clips.append(
                        ClipRecord(
                            clip_id=_req(rec, "clip_id", str, lineno),
                            video_id=_req(rec, "video_id", str, lineno),
                            frame_refs=_str_list(rec, "frames", lineno),
                            narration=narration,
                            t_start=float(_req(rec, "t_start", (int, float), lineno)),
                            t_end=float(_req(rec, "t_end", (int, float), lineno)),
                            frame_labels=_parse_frame_labels(rec.get("frame_labels"), lineno),
                        )
                    )
                else:
                    raise SchemaError(lineno, "type", f"unknown record type {kind!r}")
            except SchemaError as exc:
                if exc.line is None:
                    raise SchemaError(lineno, exc.field, str(exc)) from None
                raise
    return Dataset(videos, clips)


def manifest_lines(dataset: Dataset) -> list[str]:
    lines = []
    for v in dataset.videos.values():
        lines.append(json.dumps({
            "type": "video", "video_id": v.video_id, "kind": v.kind.value,
            "title": v.title, "clip_ids": list(v.clip_ids),
        }))
        for c in dataset.clips_of(v):
            rec: dict[str, Any] = {
                "type": "clip", "clip_id": c.clip_id, "video_id": c.video_id,
                "t_start": c.t_start, "t_end": c.t_end, "narration": c.narration,
                "frames": list(c.frame_refs),
            }
            if c.frame_labels is not None:
                rec["frame_labels"] = [list(x) if isinstance(x, tuple) else x for x in c.frame_labels]
            lines.append(json.dumps(rec))
    return lines


def save_manifest(dataset: Dataset, path: str | os.PathLike) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, "\n".join(manifest_lines(dataset)) + "\n")


# ---------------------------------------------------------------------------
# transcripts

@dataclass(frozen=True)
class TranscriptSegment:
    text: str
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        if not self.t_end > self.t_start:
            raise SchemaError(None, "t_end", "segment t_end must exceed t_start")


DEFAULT_LINKING_WORDS: tuple[str, ...] = ("and", "which", "so", "then", "because", "but")
DEFAULT_TERMINAL_PUNCTUATION: str = ".?!"

_WORD = re.compile(r"[A-Za-z']+")


def _should_merge(prev: str, nxt: str, linking: frozenset[str], terminal: str) -> bool:
    stripped = prev.rstrip()
    if not stripped or stripped[-1] not in terminal:
        return True
    m = _WORD.match(nxt.lstrip())
    return bool(m) and m.group(0).lower() in linking


def merge_transcript_segments(
    segments: Sequence[TranscriptSegment],
    linking_words: Iterable[str] = DEFAULT_LINKING_WORDS,
    terminal_punctuation: str = DEFAULT_TERMINAL_PUNCTUATION,
) -> list[TranscriptSegment]:
    """Join ASR segments that split a sentence.

    Two neighbours are joined when the first lacks terminal punctuation or the
    second opens with a linking word. Merging runs left to right and repeats
    until nothing changes.
    """
    if not segments:
        raise EmptyInput("no transcript segments")
    linking = frozenset(w.lower() for w in linking_words)
    current = list(segments)
    while True:
        merged: list[TranscriptSegment] = [current[0]]
        for seg in current[1:]:
            last = merged[-1]
            if _should_merge(last.text, seg.text, linking, terminal_punctuation):
                merged[-1] = TranscriptSegment(f"{last.text} {seg.text}", last.t_start, seg.t_end)
            else:
                merged.append(seg)
        if len(merged) == len(current):
            return merged
        current = merged


# ---------------------------------------------------------------------------
# synthetic data

_CONCEPT_NAMES = (
    "incision", "viscoelastic", "capsulorhexis", "hydrodissection",
    "phacoemulsification", "aspiration", "implantation", "tonifying",
)


def synthetic_label_names(n_concepts: int) -> list[str]:
    """Class label of each synthetic concept, as used in ``frame_labels``."""
    return [f"concept-{c} {_CONCEPT_NAMES[c % len(_CONCEPT_NAMES)]}" for c in range(n_concepts)]


@dataclass(frozen=True)
class SynthSpec:
    n_narrative: int
    n_silent: int
    clips_per_video: int
    n_concepts: int

    def validate(self) -> None:
        for name in ("n_narrative", "n_silent", "clips_per_video", "n_concepts"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < 1:
                raise InvalidSpec(f"{name} must be an integer >= 1, got {val!r}")


def synthesize_dataset(spec: SynthSpec, seed: int) -> Dataset:
    """Generate a small dataset whose frames and texts both encode a latent concept.

    Video ``i`` of each kind gets concept ``i % n_concepts``. Narrative videos
    also get a variant index (their rank within the concept) that appears in
    their title and narrations and changes the rendered frames, so that
    videos sharing a concept stay distinguishable. Frames are ``synth:``
    references rendered on demand by :func:`hiervlp.frames.load_frame`.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    videos: list[VideoRecord] = []
    clips: list[ClipRecord] = []
    labels = synthetic_label_names(spec.n_concepts)

    def make_video(kind: VideoKind, idx: int) -> None:
        concept = idx % spec.n_concepts
        name = _CONCEPT_NAMES[concept % len(_CONCEPT_NAMES)]
        prefix = "nar" if kind is VideoKind.NARRATIVE else "sil"
        vid = f"{prefix}{idx:03d}"
        # silent videos live in their own variant range so their frames differ from narrative ones
        variant = idx // spec.n_concepts if kind is VideoKind.NARRATIVE else 50 + idx // spec.n_concepts
        if kind is VideoKind.NARRATIVE:
            title = f"concept-{concept} {name} surgery overview, variant-{variant} approach"
        else:
            title = f"concept-{concept} {name} procedure recording"
        t = 0.0
        clip_ids = []
        for j in range(spec.clips_per_video):
            duration = float(np.round(rng.uniform(8.0, 24.0), 2))
            n_frames = max(1, int(duration * 0.5))  # 0.5 fps extraction
            cid = f"{vid}_c{j:02d}"
            refs = tuple(f"synth:{seed}:{concept}:{variant}:{j}:{f}" for f in range(n_frames))
            narration = None
            if kind is VideoKind.NARRATIVE:
                narration = (
                    f"Step-{j} of concept-{concept} {name}: the surgeon continues "
                    f"the variant-{variant} technique."
                )
            clips.append(ClipRecord(
                clip_id=cid, video_id=vid, frame_refs=refs, narration=narration,
                t_start=t, t_end=round(t + duration, 2),
                frame_labels=tuple(labels[concept] for _ in refs),
            ))
            clip_ids.append(cid)
            t = round(t + duration, 2)
        videos.append(VideoRecord(vid, kind, title, tuple(clip_ids)))

    for i in range(spec.n_narrative):
        make_video(VideoKind.NARRATIVE, i)
    for i in range(spec.n_silent):
        make_video(VideoKind.SILENT, i)
    return Dataset(videos, clips)


# ---------------------------------------------------------------------------
# frame sampling

def sample_frame_indices(n_available: int, n_frames: int) -> list[int]:
    """Evenly spaced indices ``floor(i * n_available / n_frames)``.

    With fewer frames than requested every frame is repeated in order, so
    3 frames sampled to 8 give ``[0, 0, 0, 1, 1, 1, 2, 2]``.
    """
    if n_available < 1:
        raise EmptyInput("clip has no frames")
    if n_frames < 1:
        raise InvalidSpec("n_frames must be >= 1")
    return [(i * n_available) // n_frames for i in range(n_frames)]


def sample_frames(clip: ClipRecord, n_frames: int) -> list[str]:
    return [clip.frame_refs[i] for i in sample_frame_indices(len(clip.frame_refs), n_frames)]
