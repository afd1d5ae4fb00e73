"""Visual, text and frozen query encoders mapping into one unit-norm embedding space.

The toy backbones are fixed feature extractors (grid-pooled pixel statistics
for frames, signed hashed token counts for text). Only the linear
projections on top of them are trained. A projection followed by L2
normalisation is all that is needed to backpropagate, so the backward pass is
written out by hand in :class:`Projection`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .data import ClipRecord, Dataset, VideoRecord, sample_frames
from .errors import DimensionMismatch, EmptyList, EmptyText, ShapeMismatch
from .frames import load_frames
from .io import load_container, save_container

CHECKPOINT_FORMAT = 1
_EPS = 1e-12
_TOKEN = re.compile(r"[a-z0-9]+(?:[-/_][a-z0-9]+)*")


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 768
    query_dim: int = 768
    grid: int = 4
    text_buckets: int = 1024
    text_len: int = 77
    image_size: int = 224
    n_frames: int = 8
    # tokens matching this pattern are up-weighted by the toy text featurizer
    salient_pattern: str | None = r"concept-\d+"
    salient_weight: float = 4.0
    seed: int = 0

    @property
    def visual_features(self) -> int:
        return 3 * self.grid * self.grid + 3 + 1

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=axis, keepdims=True), _EPS)


def tokenize(text: str, max_len: int = 77) -> list[str]:
    return _TOKEN.findall(text.lower())[:max_len]


@lru_cache(maxsize=65536)
def _bucket(token: str, n_buckets: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return h % n_buckets, (1.0 if (h >> 63) & 1 else -1.0)


def text_features(text: str, cfg: EncoderConfig) -> np.ndarray:
    if not text or not text.strip():
        raise EmptyText("text must be non-empty")
    tokens = tokenize(text, cfg.text_len)
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    salient = re.compile(cfg.salient_pattern) if cfg.salient_pattern else None
    feat = np.zeros(cfg.text_buckets, dtype=np.float64)
    for tok in tokens:
        idx, sign = _bucket(tok, cfg.text_buckets)
        weight = cfg.salient_weight if salient is not None and salient.fullmatch(tok) else 1.0
        feat[idx] += sign * weight
    return feat


def pixel_features(frames: np.ndarray, grid: int) -> np.ndarray:
    """Per-frame features: grid-pooled channel means (centred), channel std, bias term."""
    frames = np.asarray(frames, dtype=np.float64)
    n, h, w, c = frames.shape
    rows = np.linspace(0, h, grid + 1).astype(int)[:-1]
    cols = np.linspace(0, w, grid + 1).astype(int)[:-1]
    sums = np.add.reduceat(np.add.reduceat(frames, rows, axis=1), cols, axis=2)
    counts = np.diff(np.append(rows, h))[:, None] * np.diff(np.append(cols, w))[None, :]
    means = sums / counts[None, :, :, None] - 0.5
    std = frames.reshape(n, -1, c).std(axis=1)
    return np.concatenate([means.reshape(n, -1), std, np.ones((n, 1))], axis=1)


class Projection:
    """``x -> normalize(W x)`` with a hand-written backward pass."""

    def __init__(self, weight: np.ndarray) -> None:
        self.weight = weight

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return unit-norm outputs and the pre-normalisation norms (needed by backward)."""
        u = np.atleast_2d(x) @ self.weight.T
        norms = np.maximum(np.linalg.norm(u, axis=1, keepdims=True), _EPS)
        return u / norms, norms

    def backward(self, x: np.ndarray, out: np.ndarray, norms: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the weight given the gradient w.r.t. the normalised outputs."""
        grad_u = (grad_out - out * np.sum(out * grad_out, axis=1, keepdims=True)) / norms
        return grad_u.T @ np.atleast_2d(x)


def aggregate_video(clip_embeddings: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Average-pool clip embeddings and renormalise."""
    arr = np.asarray(clip_embeddings, dtype=np.float64)
    if arr.size == 0 or arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptyList("aggregate_video needs a non-empty list of equal-length embeddings")
    return l2_normalize(arr.mean(axis=0))


def aggregate_backward(clip_embeddings: np.ndarray, grad_video: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. each clip embedding given the gradient w.r.t. the pooled video embedding."""
    mean = clip_embeddings.mean(axis=0)
    norm = max(np.linalg.norm(mean), _EPS)
    video = mean / norm
    grad_mean = (grad_video - video * np.dot(video, grad_video)) / norm
    return np.broadcast_to(grad_mean / len(clip_embeddings), clip_embeddings.shape).copy()


class EncoderBundle:
    """Visual, text and query encoders sharing one configuration.

    ``params`` holds every array by name. ``visual.proj`` and ``text.proj``
    are trainable; ``query.proj`` is frozen and never exposed to the optimizer.
    """

    TRAINABLE = ("visual.proj", "text.proj")

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), params: Mapping[str, np.ndarray] | None = None) -> None:
        self.cfg = cfg
        if params is None:
            params = init_params(cfg)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.params["query.proj"].setflags(write=False)
        self._feature_cache: dict[tuple[str, ...], np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.cfg.dim

    @property
    def visual(self) -> Projection:
        return Projection(self.params["visual.proj"])

    @property
    def text(self) -> Projection:
        return Projection(self.params["text.proj"])

    @property
    def query(self) -> Projection:
        return Projection(self.params["query.proj"])

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: self.params[k] for k in self.TRAINABLE}

    # -- features ---------------------------------------------------------
    def frame_features(self, frames: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
        """Average-pooled backbone features of one clip's frames."""
        if len(frames) == 0:
            raise ShapeMismatch("a clip needs at least one frame")
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ShapeMismatch(f"frames differ in shape: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 3 or shape[2] != 3:
            raise ShapeMismatch(f"frames must be HxWx3, got {shape}")
        return pixel_features(np.asarray(frames), self.cfg.grid).mean(axis=0)

    def clip_features(self, clip: ClipRecord) -> np.ndarray:
        """Backbone features of a clip's sampled, unaugmented frames (memoised)."""
        refs = tuple(sample_frames(clip, self.cfg.n_frames))
        feat = self._feature_cache.get(refs)
        if feat is None:
            feat = self.frame_features(load_frames(refs, self.cfg.image_size))
            self._feature_cache[refs] = feat
        return feat

    # -- embeddings -------------------------------------------------------
    def encode_clip(self, frames: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
        return self.visual.forward(self.frame_features(frames))[0][0]

    def encode_text(self, text: str) -> np.ndarray:
        return self.text.forward(text_features(text, self.cfg))[0][0]

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self.text.forward(np.stack([text_features(t, self.cfg) for t in texts]))[0]

    def encode_query(self, title: str) -> np.ndarray:
        return self.query.forward(text_features(title, self.cfg))[0][0]

    def encode_record(self, clip: ClipRecord) -> np.ndarray:
        return self.visual.forward(self.clip_features(clip))[0][0]

    def encode_video(self, video: VideoRecord, dataset: Dataset) -> np.ndarray:
        clips = dataset.clips_of(video)
        feats = np.stack([self.clip_features(c) for c in clips])
        return aggregate_video(self.visual.forward(feats)[0])

    def copy(self) -> "EncoderBundle":
        return EncoderBundle(self.cfg, self.params)


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 17])
    qrng = np.random.default_rng([cfg.seed, 23])
    fv, ft = cfg.visual_features, cfg.text_buckets
    return {
        "visual.proj": rng.normal(0.0, 1.0 / np.sqrt(fv), size=(cfg.dim, fv)),
        "text.proj": rng.normal(0.0, 1.0 / np.sqrt(ft), size=(cfg.dim, ft)),
        "query.proj": qrng.normal(0.0, 1.0 / np.sqrt(ft), size=(cfg.query_dim, ft)),
    }


def save_checkpoint(
    path, encoders: EncoderBundle, extra_meta: Mapping | None = None,
    extra_arrays: Mapping[str, np.ndarray] | None = None,
) -> None:
    meta = {
        "config": asdict(encoders.cfg),
        "config_hash": encoders.cfg.config_hash(),
        "dim": encoders.cfg.dim,
        **(extra_meta or {}),
    }
    arrays = {f"param/{k}": v for k, v in encoders.params.items()}
    arrays.update({f"extra/{k}": v for k, v in (extra_arrays or {}).items()})
    save_container(path, "checkpoint", CHECKPOINT_FORMAT, meta, arrays)


def load_checkpoint(path, expected_dim: int | None = None) -> tuple[EncoderBundle, dict, dict[str, np.ndarray]]:
    """Return ``(encoders, meta, extra_arrays)`` from a checkpoint file."""
    meta, arrays = load_container(path, "checkpoint", CHECKPOINT_FORMAT)
    cfg = EncoderConfig(**meta["config"])
    if expected_dim is not None and cfg.dim != expected_dim:
        raise DimensionMismatch(f"checkpoint has dim {cfg.dim}, expected {expected_dim}")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return EncoderBundle(cfg, params), meta, extra
