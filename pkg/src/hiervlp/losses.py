"""Contrastive objectives with analytic gradients.

Every loss here consumes row-aligned batches of embeddings (rows are assumed
unit-norm but nothing is renormalised), divides inner products by the
temperature, and returns the negative log-likelihood of the positives. The
``*_and_grad`` variants also return gradients w.r.t. every input array; the
plain variants return only the scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import BatchMismatch, InvalidConfig, RaggedRetrieval


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    w_vl: float = 0.5
    w_vv: float = 0.5
    # average the two InfoNCE directions; False keeps only rows -> columns
    symmetric: bool = True
    # silent-video loss with within-query candidates only (identically zero for K=1)
    within_query_only: bool = False

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise InvalidConfig("temperature must be > 0")
        if self.w_vl < 0 or self.w_vv < 0 or not (self.w_vl + self.w_vv) > 0:
            raise InvalidConfig("loss weights must be >= 0 with a positive sum")


def _as_batch(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise BatchMismatch(f"{name} must be a 2-D batch, got shape {arr.shape}")
    return arr


def info_nce_and_grad(
    a: np.ndarray, b: np.ndarray, temperature: float, symmetric: bool = True,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Diagonal-positive InfoNCE over the ``B x B`` similarity matrix of ``a`` and ``b``."""
    a = _as_batch(a, "a")
    b = _as_batch(b, "b")
    if a.shape != b.shape:
        raise BatchMismatch(f"batch shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n == 0:
        raise BatchMismatch("empty batch")
    logits = a @ b.T / temperature
    diag = np.diag(logits)
    row_loss = np.mean(logsumexp(logits, axis=1) - diag)
    grad_logits = softmax(logits, axis=1) - np.eye(n)
    if symmetric:
        col_loss = np.mean(logsumexp(logits, axis=0) - diag)
        loss = 0.5 * (row_loss + col_loss)
        grad_logits = 0.5 * (grad_logits + softmax(logits, axis=0) - np.eye(n))
    else:
        loss = row_loss
    grad_logits /= n * temperature
    return max(float(loss), 0.0), (grad_logits @ b, grad_logits.T @ a)


def clip_vl_loss_and_grad(visual, text, cfg: LossConfig = LossConfig()):
    """Clip <-> narration alignment."""
    return info_nce_and_grad(visual, text, cfg.temperature, cfg.symmetric)


def clip_vv_loss_and_grad(view_a, view_b, cfg: LossConfig = LossConfig()):
    """Two augmented views of each clip; view_b[i] is the positive for view_a[i]."""
    return info_nce_and_grad(view_a, view_b, cfg.temperature, cfg.symmetric)


def video_narrative_loss_and_grad(video, title, cfg: LossConfig = LossConfig()):
    """Whole-video embedding <-> its title, other titles in the batch as negatives."""
    return info_nce_and_grad(video, title, cfg.temperature, cfg.symmetric)


def video_silent_loss_and_grad(
    video, retrieved_visual, retrieved_text, cfg: LossConfig = LossConfig(),
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Retrieval-augmented loss for narrative videos.

    ``retrieved_visual`` and ``retrieved_text`` have shape ``(B, K, D)``: the
    K memory-bank values retrieved for each query video. For query ``i`` the
    2K logits against its own retrieved values are positives; the logits
    against every other query's retrieved values are negatives. With
    ``cfg.within_query_only`` the candidate set shrinks to the query's own values.
    """
    v = _as_batch(video, "video")
    rv = np.asarray(retrieved_visual, dtype=np.float64)
    rt = np.asarray(retrieved_text, dtype=np.float64)
    if rv.ndim != 3 or rt.ndim != 3 or rv.shape != rt.shape:
        raise RaggedRetrieval(f"retrieved values must share shape (B, K, D); got {rv.shape} and {rt.shape}")
    bsz, k, d = rv.shape
    if bsz != v.shape[0] or d != v.shape[1]:
        raise BatchMismatch(f"video batch {v.shape} does not match retrieved values {rv.shape}")
    if k == 0:
        raise RaggedRetrieval("no retrieved values")
    tau = cfg.temperature
    # candidates laid out as (query m, slot j, modality): flatten to B * 2K columns
    cand = np.concatenate([rv, rt], axis=1).reshape(bsz * 2 * k, d)
    logits = v @ cand.T / tau
    owner = np.repeat(np.arange(bsz), 2 * k)
    pos = owner[None, :] == np.arange(bsz)[:, None]
    allowed = pos if cfg.within_query_only else np.ones_like(pos)
    masked_all = np.where(allowed, logits, -np.inf)
    masked_pos = np.where(pos, logits, -np.inf)
    lse_all = logsumexp(masked_all, axis=1)
    lse_pos = logsumexp(masked_pos, axis=1)
    loss = float(np.mean(lse_all - lse_pos))
    p_all = np.exp(masked_all - lse_all[:, None])
    p_pos = np.exp(masked_pos - lse_pos[:, None])
    grad_logits = (p_all - p_pos) / (bsz * tau)
    grad_v = grad_logits @ cand
    grad_cand = (grad_logits.T @ v).reshape(bsz, 2 * k, d)
    return max(loss, 0.0), (grad_v, grad_cand[:, :k], grad_cand[:, k:])


def stack_retrieved(retrieved) -> tuple[np.ndarray, np.ndarray]:
    """Turn per-query lists of ``(visual, text)`` pairs into two ``(B, K, D)`` arrays."""
    ks = {len(r) for r in retrieved}
    if len(ks) != 1:
        raise RaggedRetrieval(f"queries retrieved different numbers of entries: {sorted(ks)}")
    vis = np.asarray([[p[0] for p in r] for r in retrieved], dtype=np.float64)
    txt = np.asarray([[p[1] for p in r] for r in retrieved], dtype=np.float64)
    return vis, txt


def clip_total_loss(vl: float, vv: float, cfg: LossConfig = LossConfig()) -> float:
    return cfg.w_vl * vl + cfg.w_vv * vv


def video_total_loss(narrative: float, silent: float) -> float:
    return narrative + silent


def clip_vl_loss(visual, text, cfg: LossConfig = LossConfig()) -> float:
    return clip_vl_loss_and_grad(visual, text, cfg)[0]


def clip_vv_loss(view_a, view_b, cfg: LossConfig = LossConfig()) -> float:
    return clip_vv_loss_and_grad(view_a, view_b, cfg)[0]


def video_narrative_loss(video, title, cfg: LossConfig = LossConfig()) -> float:
    return video_narrative_loss_and_grad(video, title, cfg)[0]


def video_silent_loss(video, retrieved_visual, retrieved_text, cfg: LossConfig = LossConfig()) -> float:
    return video_silent_loss_and_grad(video, retrieved_visual, retrieved_text, cfg)[0]
