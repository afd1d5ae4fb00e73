"""Hierarchical pretraining: clip steps, retrieval-augmented video steps, alternating schedule."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .data import ClipRecord, Dataset, VideoRecord, sample_frames
from .encoders import (
    EncoderBundle, EncoderConfig, aggregate_backward, aggregate_video,
    load_checkpoint, save_checkpoint, text_features,
)
from .errors import EmptyBank, InvalidConfig, MissingFile, NonNarrativeVideo, SilentClipInBatch
from .frames import AugmentConfig, augment_clip, load_frames
from .io import atomic_write_json, atomic_write_text
from .losses import (
    LossConfig, clip_total_loss, clip_vl_loss_and_grad, clip_vv_loss_and_grad,
    video_narrative_loss_and_grad, video_silent_loss_and_grad, video_total_loss,
)
from .memory_bank import MemoryBank, build_bank, refresh_values

logger = logging.getLogger(__name__)

_LOSS_KEYS = {f.name for f in fields(LossConfig)}


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 60
    warmup_clip_epochs: int = 40
    alt_clip_epochs: int = 3
    alt_video_epochs: int = 2
    # "epoch": alternate whole epochs; "batch": after warm-up, interleave
    # alt_clip_epochs clip batches with alt_video_epochs video batches inside each epoch
    alternation: str = "epoch"
    batch_clip: int = 120
    batch_video: int = 140
    lr: float = 8e-5
    lr_min_ratio: float = 1e-3
    scheduler: str = "cosine"
    optimizer: str = "adam"
    momentum: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    k_retrieved: int = 1
    n_frames: int = 8
    image_size: int = 224
    text_len: int = 77
    dim: int = 768
    augment: bool = True
    checkpoint_every: int = 10
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        counts = ("total_epochs", "batch_clip", "batch_video", "k_retrieved", "n_frames",
                  "image_size", "text_len", "dim", "checkpoint_every")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.warmup_clip_epochs < 0 or self.warmup_clip_epochs > self.total_epochs:
            raise InvalidConfig("warmup_clip_epochs must lie in [0, total_epochs]")
        if self.alt_clip_epochs < 0 or self.alt_video_epochs < 0 or self.alt_clip_epochs + self.alt_video_epochs < 1:
            raise InvalidConfig("alt_clip_epochs + alt_video_epochs must be >= 1")
        if self.alternation not in ("epoch", "batch"):
            raise InvalidConfig("alternation must be 'epoch' or 'batch'")
        if self.alternation == "batch" and (self.alt_clip_epochs < 1 or self.alt_video_epochs < 1):
            raise InvalidConfig("batch alternation needs alt_clip_epochs >= 1 and alt_video_epochs >= 1")
        if self.scheduler != "cosine" or self.optimizer != "adam":
            raise InvalidConfig("only scheduler=cosine and optimizer=adam are supported")
        if not self.lr >= 0:
            raise InvalidConfig("lr must be >= 0")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            dim=self.dim, query_dim=self.dim, text_len=self.text_len,
            image_size=self.image_size, n_frames=self.n_frames, seed=self.seed,
        )

    def to_flat(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"}
        out.update(asdict(self.loss))
        return out

    @classmethod
    def from_flat(cls, values: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)} - {"loss"}
        unknown = set(values) - known - _LOSS_KEYS
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        loss = LossConfig(**{k: v for k, v in values.items() if k in _LOSS_KEYS})
        return cls(loss=loss, **{k: v for k, v in values.items() if k in known})


def load_train_config(path, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """Read a flat YAML config; ``overrides`` (e.g. CLI flags) win over file values."""
    import yaml

    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config not found: {path}")
    values = yaml.safe_load(path.read_text()) or {}
    if not isinstance(values, dict):
        raise InvalidConfig("config must be a flat key/value mapping")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_flat(values)


# ---------------------------------------------------------------------------
# schedule

class Stage(str, Enum):
    CLIP = "CLIP"
    VIDEO = "VIDEO"
    MIXED = "MIXED"  # batch-granular alternation only


@dataclass(frozen=True)
class StageLabel:
    stage: Stage
    epoch: int


def alternating_schedule(cfg: TrainConfig) -> list[StageLabel]:
    """Warm-up clip epochs, then repeating (clip x a, video x b) blocks, cut at total_epochs.

    With ``alternation="batch"`` every post-warm-up epoch is a single MIXED epoch.
    """
    stages = [Stage.CLIP] * cfg.warmup_clip_epochs
    if cfg.alternation == "batch":
        stages += [Stage.MIXED] * (cfg.total_epochs - cfg.warmup_clip_epochs)
    block = [Stage.CLIP] * cfg.alt_clip_epochs + [Stage.VIDEO] * cfg.alt_video_epochs
    while len(stages) < cfg.total_epochs:
        stages.extend(block)
    return [StageLabel(s, i) for i, s in enumerate(stages[: cfg.total_epochs])]


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Per-epoch cosine decay from ``lr`` down to ``lr * lr_min_ratio`` at the last epoch."""
    if cfg.total_epochs == 1:
        return cfg.lr
    lr_min = cfg.lr * cfg.lr_min_ratio
    progress = epoch / (cfg.total_epochs - 1)
    return lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Plain Adam; ``momentum`` is beta1."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array(self.t, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"])
        self.m = {k[len("adam.m/"):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.v/")}


# ---------------------------------------------------------------------------
# training steps

def _batches(items: Sequence, size: int, rng: np.random.Generator) -> list[list]:
    order = rng.permutation(len(items))
    return [[items[i] for i in order[s : s + size]] for s in range(0, len(order), size)]


class Trainer:
    """Owns the encoders, optimizer and memory bank for one pretraining run."""

    def __init__(
        self, dataset: Dataset, cfg: TrainConfig = TrainConfig(),
        encoders: EncoderBundle | None = None, augment: AugmentConfig | None = None,
    ) -> None:
        self.dataset = dataset
        self.cfg = cfg
        self.encoders = encoders if encoders is not None else EncoderBundle(cfg.encoder_config())
        self.augment = augment if augment is not None else AugmentConfig(enabled=cfg.augment)
        self.optimizer = Adam(cfg.momentum, cfg.beta2, cfg.adam_eps)
        self.bank: MemoryBank | None = None
        self.lr = cfg.lr
        self.schedule = alternating_schedule(cfg)

    # -- clip level -------------------------------------------------------
    def train_step_clip(self, clips: Sequence[ClipRecord], rng: np.random.Generator) -> float:
        for c in clips:
            if c.narration is None:
                raise SilentClipInBatch(f"clip {c.clip_id!r} has no narration")
        enc = self.encoders
        size = enc.cfg.image_size
        feats_a, feats_b = [], []
        for c in clips:
            frames = load_frames(sample_frames(c, enc.cfg.n_frames), size)
            feats_a.append(enc.frame_features(augment_clip(frames, rng, self.augment)))
            feats_b.append(enc.frame_features(augment_clip(frames, rng, self.augment)))
        phi_a, phi_b = np.stack(feats_a), np.stack(feats_b)
        txt = np.stack([text_features(c.narration, enc.cfg) for c in clips])

        vis, txt_proj = enc.visual, enc.text
        ea, na = vis.forward(phi_a)
        eb, nb = vis.forward(phi_b)
        et, nt = txt_proj.forward(txt)
        lc = self.cfg.loss
        vl, (g_a_vl, g_t) = clip_vl_loss_and_grad(ea, et, lc)
        vv, (g_a_vv, g_b) = clip_vv_loss_and_grad(ea, eb, lc)
        loss = clip_total_loss(vl, vv, lc)

        grads = {
            "visual.proj": vis.backward(phi_a, ea, na, lc.w_vl * g_a_vl + lc.w_vv * g_a_vv)
            + vis.backward(phi_b, eb, nb, lc.w_vv * g_b),
            "text.proj": txt_proj.backward(txt, et, nt, lc.w_vl * g_t),
        }
        self.optimizer.step(enc.params, grads, self.lr)
        return loss

    # -- video level ------------------------------------------------------
    def retrieved_values(self, videos: Sequence[VideoRecord], bank: MemoryBank) -> tuple[np.ndarray, np.ndarray]:
        k = min(self.cfg.k_retrieved, len(bank))
        vis, txt = [], []
        for v in videos:
            _, rv, rt = bank.retrieve_values(self.encoders.encode_query(v.title), k)
            vis.append(rv)
            txt.append(rt)
        return np.stack(vis), np.stack(txt)

    def video_losses(self, videos: Sequence[VideoRecord], bank: MemoryBank):
        """Forward/backward of the video-level objective without an optimizer update.

        Returns ``(narrative, silent, grads)``; retrieved bank values are constants.
        """
        for v in videos:
            if not v.is_narrative:
                raise NonNarrativeVideo(f"video {v.video_id!r} is not narrative")
        if bank is None or len(bank) == 0:
            raise EmptyBank("video-level training needs a non-empty memory bank")
        enc = self.encoders
        vis, txt_proj = enc.visual, enc.text
        per_video = []
        for v in videos:
            phi = np.stack([enc.clip_features(c) for c in self.dataset.clips_of(v)])
            e, n = vis.forward(phi)
            per_video.append((phi, e, n))
        video_emb = np.stack([aggregate_video(e) for _, e, _ in per_video])
        tfeat = np.stack([text_features(v.title, enc.cfg) for v in videos])
        et, nt = txt_proj.forward(tfeat)

        lc = self.cfg.loss
        narrative, (g_vid_n, g_t) = video_narrative_loss_and_grad(video_emb, et, lc)
        rv, rt = self.retrieved_values(videos, bank)
        silent, (g_vid_s, _, _) = video_silent_loss_and_grad(video_emb, rv, rt, lc)
        g_vid = g_vid_n + g_vid_s

        g_vis = np.zeros_like(enc.params["visual.proj"])
        for (phi, e, n), g in zip(per_video, g_vid):
            g_vis += vis.backward(phi, e, n, aggregate_backward(e, g))
        grads = {"visual.proj": g_vis, "text.proj": txt_proj.backward(tfeat, et, nt, g_t)}
        return narrative, silent, grads

    def train_step_video(self, videos: Sequence[VideoRecord], bank: MemoryBank) -> float:
        narrative, silent, grads = self.video_losses(videos, bank)
        self.optimizer.step(self.encoders.params, grads, self.lr)
        return video_total_loss(narrative, silent)

    # -- epochs -----------------------------------------------------------
    def ensure_bank(self) -> MemoryBank:
        if self.bank is None:
            silent = self.dataset.silent_videos()
            if not silent:
                raise EmptyBank("dataset has no silent videos to build the memory bank from")
            self.bank = build_bank(silent, self.encoders, self.dataset)
        return self.bank

    def starts_video_stage(self, label: StageLabel) -> bool:
        return label.stage is Stage.VIDEO and (
            label.epoch == 0 or self.schedule[label.epoch - 1].stage is not Stage.VIDEO
        )

    def run_epoch(self, label: StageLabel) -> dict[str, Any]:
        rng = np.random.default_rng([self.cfg.seed, label.epoch])
        self.lr = cosine_lr(label.epoch, self.cfg)
        losses = []
        if label.stage is Stage.CLIP:
            for batch in _batches(self.dataset.narrative_clips(), self.cfg.batch_clip, rng):
                losses.append(self.train_step_clip(batch, rng))
        elif label.stage is Stage.VIDEO:
            bank = self.ensure_bank()
            if self.starts_video_stage(label):
                refresh_values(bank, self.encoders, self.dataset)
            for batch in _batches(self.dataset.narrative_videos(), self.cfg.batch_video, rng):
                losses.append(self.train_step_video(batch, bank))
        else:
            losses = self._run_mixed(rng)
        return {
            "epoch": label.epoch, "stage": label.stage.value,
            "mean_loss": float(np.mean(losses)), "lr": self.lr, "steps": len(losses),
        }

    def _run_mixed(self, rng: np.random.Generator) -> list[float]:
        """a clip batches, refresh, b video batches; repeat until the clip batches run out."""
        clip_batches = _batches(self.dataset.narrative_clips(), self.cfg.batch_clip, rng)
        video_batches = _batches(self.dataset.narrative_videos(), self.cfg.batch_video, rng)
        bank = self.ensure_bank()
        a, b = self.cfg.alt_clip_epochs, self.cfg.alt_video_epochs
        losses, v = [], 0
        for start in range(0, len(clip_batches), a):
            for batch in clip_batches[start : start + a]:
                losses.append(self.train_step_clip(batch, rng))
            refresh_values(bank, self.encoders, self.dataset)
            for _ in range(b):
                losses.append(self.train_step_video(video_batches[v % len(video_batches)], bank))
                v += 1
        return losses

    # -- persistence ------------------------------------------------------
    def save(self, path, epochs_done: int) -> None:
        arrays = self.optimizer.state_arrays()
        if self.bank is not None:
            # bank values are stale snapshots between refreshes; keep them for an exact resume
            arrays.update({
                "bank.values_text": self.bank.values_text, "bank.values_visual": self.bank.values_visual,
                "bank.generations": self.bank.generations,
            })
        save_checkpoint(
            path, self.encoders,
            extra_meta={
                "epochs_done": epochs_done, "train_config": self.cfg.to_flat(),
                "version": __version__,
            },
            extra_arrays=arrays,
        )

    def restore(self, path) -> int:
        enc, meta, extra = load_checkpoint(path)
        self.encoders = enc
        self.optimizer.load_state_arrays(extra)
        self.bank = None
        if "bank.values_text" in extra:
            bank = self.ensure_bank()
            bank.values_text = np.array(extra["bank.values_text"])
            bank.values_visual = np.array(extra["bank.values_visual"])
            bank.generations = np.array(extra["bank.generations"])
        return int(meta["epochs_done"])


_CKPT = re.compile(r"ckpt_epoch(\d+)\.npz$")


def latest_checkpoint(out_dir) -> Path | None:
    found = []
    for p in Path(out_dir).glob("ckpt_epoch*.npz"):
        m = _CKPT.search(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return max(found)[1] if found else None


@dataclass
class PretrainResult:
    checkpoint: Path
    metrics: list[dict[str, Any]]
    trainer: Trainer


def run_pretraining(
    dataset: Dataset, cfg: TrainConfig, out_dir, resume: bool = False,
    stop_after: int | None = None, augment: AugmentConfig | None = None,
) -> PretrainResult:
    """Run the alternating schedule, writing checkpoints and ``metrics.jsonl`` to ``out_dir``.

    ``stop_after`` ends the run after that many epochs (used to simulate an
    interruption); ``resume`` continues from the newest checkpoint in ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not dataset.narrative_videos():
        raise NonNarrativeVideo("pretraining needs at least one narrative video")
    schedule = alternating_schedule(cfg)
    trainer = Trainer(dataset, cfg, augment=augment)
    needs_bank = any(s.stage is not Stage.CLIP for s in schedule)
    if needs_bank:
        trainer.ensure_bank()

    metrics_path = out_dir / "metrics.jsonl"
    metrics: list[dict[str, Any]] = []
    start = 0
    if resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is not None:
            start = trainer.restore(ckpt)
            if needs_bank:
                trainer.ensure_bank()
            if metrics_path.is_file():
                metrics = [json.loads(l) for l in metrics_path.read_text().splitlines() if l.strip()]
                metrics = [m for m in metrics if m["epoch"] < start]
            logger.info("resuming from %s at epoch %d", ckpt, start)
    atomic_write_json(out_dir / "config.json", {"version": __version__, **cfg.to_flat()})

    end = cfg.total_epochs if stop_after is None else min(cfg.total_epochs, stop_after)
    last_ckpt = latest_checkpoint(out_dir)
    for label in schedule[start:end]:
        record = trainer.run_epoch(label)
        metrics.append(record)
        atomic_write_text(metrics_path, "".join(json.dumps(m) + "\n" for m in metrics))
        logger.info("epoch %d %s loss=%.4f lr=%.3g", label.epoch, label.stage.value, record["mean_loss"], record["lr"])
        done = label.epoch + 1
        if done % cfg.checkpoint_every == 0 or done == end:
            last_ckpt = out_dir / f"ckpt_epoch{done:04d}.npz"
            trainer.save(last_ckpt, done)
    if last_ckpt is None:
        last_ckpt = out_dir / f"ckpt_epoch{start:04d}.npz"
        trainer.save(last_ckpt, start)
    return PretrainResult(last_ckpt, metrics, trainer)


def train_step_clip(trainer: Trainer, clips: Sequence[ClipRecord], rng: np.random.Generator) -> float:
    return trainer.train_step_clip(clips, rng)


def train_step_video(trainer: Trainer, videos: Sequence[VideoRecord], bank: MemoryBank) -> float:
    return trainer.train_step_video(videos, bank)
