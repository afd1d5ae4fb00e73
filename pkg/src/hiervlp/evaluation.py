"""Zero-shot recognition, metrics and linear probing on frozen features."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ClassMissingInSample, EmptyInput, LengthMismatch, MissingTemplate, NoPrompts

KEYWORD_FIELDS = ("phase", "instrument", "medication", "goal")


class PromptStyle(str, Enum):
    CAPTION = "caption"
    KEYWORD = "keyword"
    MIX = "mix"


@dataclass(frozen=True)
class PromptSet:
    style: PromptStyle
    prompts: Mapping[str, tuple[str, ...]]

    @property
    def labels(self) -> list[str]:
        return list(self.prompts)


def load_templates(task: str = "phase", path=None) -> dict[str, dict[str, str]]:
    """Prompt templates keyed by label.

    Without ``path`` the bundled Cataract-1K tables are used; ``task`` picks
    ``"phase"`` or ``"instrument"``. A user file may either be that same
    two-level document or a flat ``label -> fields`` mapping.
    """
    if path is None:
        text = resources.files("hiervlp.resources").joinpath("cataract1k_prompts.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    doc = json.loads(text)
    if task in doc and isinstance(doc[task], dict):
        return doc[task]
    return doc


def keyword_prompt(fields: Mapping[str, str]) -> str:
    return "; ".join(f"{name.capitalize()}: {fields[name]}" for name in KEYWORD_FIELDS) + "."


def build_prompts(labels: Sequence[str], style: str | PromptStyle, templates: Mapping[str, Mapping[str, str]]) -> PromptSet:
    if not labels:
        raise EmptyInput("no class labels")
    style = PromptStyle(style)
    prompts: dict[str, tuple[str, ...]] = {}
    for label in labels:
        tpl = templates.get(label)
        if tpl is None:
            raise MissingTemplate(f"no prompt template for label {label!r}")
        needs = {"caption"} if style is PromptStyle.CAPTION else set(KEYWORD_FIELDS)
        if style is PromptStyle.MIX:
            needs.add("caption")
        missing = sorted(f for f in needs if not tpl.get(f))
        if missing:
            raise MissingTemplate(f"template for {label!r} lacks {missing} needed by {style.value} prompts")
        if style is PromptStyle.CAPTION:
            text = tpl["caption"]
        elif style is PromptStyle.KEYWORD:
            text = keyword_prompt(tpl)
        else:
            text = f"{tpl['caption']} {keyword_prompt(tpl)}"
        extra = tuple(tpl.get("extra", ()))  # optional additional prompts, ensembled by averaging
        prompts[label] = (text, *extra)
    return PromptSet(style, prompts)


def embed_prompts(prompt_set: PromptSet, encoders) -> list[np.ndarray]:
    return [encoders.encode_texts(list(ps)) for ps in prompt_set.prompts.values()]


# ---------------------------------------------------------------------------
# zero-shot

@dataclass(frozen=True)
class ZeroShotResult:
    scores: np.ndarray
    predictions: np.ndarray
    probabilities: np.ndarray | None = None


def class_scores(embeddings, class_prompt_embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Mean cosine similarity of each embedding against each class's prompts, shape ``(N, C)``."""
    if len(class_prompt_embeddings) == 0:
        raise NoPrompts("no classes")
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    cols = []
    for i, p in enumerate(class_prompt_embeddings):
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        if p.shape[0] == 0:
            raise NoPrompts(f"class {i} has no prompt embeddings")
        cols.append((emb @ p.T).mean(axis=1))
    return np.stack(cols, axis=1)


def zero_shot_classify(
    embeddings, class_prompt_embeddings: Sequence[np.ndarray], mode: str = "single",
    threshold: float = 0.5, tau_eval: float = 0.1,
) -> ZeroShotResult:
    """Single mode: argmax class index per row. Multi mode: boolean matrix where
    ``sigmoid(score / tau_eval) > threshold``; a probability exactly at the
    threshold counts as negative.
    """
    scores = class_scores(embeddings, class_prompt_embeddings)
    if mode == "single":
        return ZeroShotResult(scores, np.argmax(scores, axis=1))
    if mode == "multi":
        prob = expit(scores / tau_eval)
        return ZeroShotResult(scores, prob > threshold, prob)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# metrics

def average_precision(scores, truth) -> float:
    """Mean of precision@rank over the ranks of positives; ties keep input order."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    hits = truth[order]
    if not hits.any():
        return float("nan")
    cum = np.cumsum(hits)
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(cum[hits] / ranks))


def compute_metrics(predictions, ground_truth, mode: str = "single", scores=None, n_classes: int | None = None) -> dict[str, Any]:
    """Frame-level metrics.

    single: ``accuracy`` and ``macro_f1`` over integer labels. Classes that
    never occur in either predictions or ground truth are skipped.
    multi: ``fpr`` (macro mean of FP/(FP+TN), skipping classes without
    negatives) and ``map`` (macro mean AP of ``scores``, skipping classes
    without positives; predictions are ranked when no scores are given).
    """
    pred = np.asarray(predictions)
    truth = np.asarray(ground_truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} labels")
    if len(pred) == 0:
        raise EmptyInput("no frames to score")
    if mode == "single":
        pred = pred.astype(int)
        truth = truth.astype(int)
        classes = range(n_classes) if n_classes is not None else np.union1d(pred, truth)
        per_class = {}
        for c in classes:
            tp = int(np.sum((pred == c) & (truth == c)))
            fp = int(np.sum((pred == c) & (truth != c)))
            fn = int(np.sum((pred != c) & (truth == c)))
            if tp + fp + fn == 0:
                continue
            per_class[int(c)] = {"f1": 2 * tp / (2 * tp + fp + fn), "support": tp + fn}
        return {
            "accuracy": float(np.mean(pred == truth)),
            "macro_f1": float(np.mean([v["f1"] for v in per_class.values()])),
            "per_class": per_class,
        }
    if mode == "multi":
        pred = pred.astype(bool)
        truth = truth.astype(bool)
        if pred.shape != truth.shape or pred.ndim != 2:
            raise LengthMismatch(f"multi-label arrays must share an (N, C) shape: {pred.shape} vs {truth.shape}")
        sc = pred.astype(float) if scores is None else np.asarray(scores, dtype=np.float64)
        if sc.shape != truth.shape:
            raise LengthMismatch(f"scores shape {sc.shape} vs labels {truth.shape}")
        per_class = {}
        fprs, aps = [], []
        for c in range(truth.shape[1]):
            fp = int(np.sum(pred[:, c] & ~truth[:, c]))
            tn = int(np.sum(~pred[:, c] & ~truth[:, c]))
            entry: dict[str, float] = {}
            if fp + tn > 0:
                entry["fpr"] = fp / (fp + tn)
                fprs.append(entry["fpr"])
            if truth[:, c].any():
                entry["ap"] = average_precision(sc[:, c], truth[:, c])
                aps.append(entry["ap"])
            per_class[c] = entry
        return {
            "fpr": float(np.mean(fprs)) if fprs else float("nan"),
            "map": float(np.mean(aps)) if aps else float("nan"),
            "per_class": per_class,
        }
    raise ValueError(f"unknown mode {mode!r}")


def retrieval_top1(queries, targets) -> float:
    """Fraction of rows whose most similar target is the row-aligned one."""
    sims = np.asarray(queries) @ np.asarray(targets).T
    return float(np.mean(np.argmax(sims, axis=1) == np.arange(len(sims))))


# ---------------------------------------------------------------------------
# linear probing

def _majority(labels: np.ndarray) -> int:
    vals, counts = np.unique(labels, return_counts=True)
    return int(vals[np.argmax(counts)])


def split_videos(groups, labels, test_fraction: float = 0.3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Frame masks for a video-level train/test split, stratified by each video's majority label."""
    groups = np.asarray(groups)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test_videos: list[Any] = []
    by_class: dict[int, list[Any]] = {}
    for g in np.unique(groups):
        by_class.setdefault(_majority(labels[groups == g]), []).append(g)
    for c in sorted(by_class):
        vids = by_class[c]
        if len(vids) < 2:
            continue
        n_test = min(len(vids) - 1, max(1, int(round(test_fraction * len(vids)))))
        test_videos.extend(rng.choice(vids, size=n_test, replace=False).tolist())
    test = np.isin(groups, test_videos)
    return ~test, test


def sample_videos(groups, labels, fraction: float, seed: int = 0) -> np.ndarray:
    """Frame mask keeping ``fraction`` of the videos of every majority class (at least one each)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    groups = np.asarray(groups)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[Any]] = {}
    for g in np.unique(groups):
        by_class.setdefault(_majority(labels[groups == g]), []).append(g)
    keep: list[Any] = []
    for c in sorted(by_class):
        vids = by_class[c]
        n = max(1, int(round(fraction * len(vids))))
        keep.extend(rng.choice(vids, size=n, replace=False).tolist())
    mask = np.isin(groups, keep)
    missing = sorted(set(np.unique(labels).tolist()) - set(np.unique(labels[mask]).tolist()))
    if missing:
        raise ClassMissingInSample(f"classes {missing} have no frames after sampling {fraction:.0%} of videos")
    return mask


def linear_probe(
    train_features, train_labels, train_groups, test_features, test_labels,
    fraction: float = 1.0, seed: int = 0, C: float = 1.0,
) -> dict[str, Any]:
    """Fit a linear hinge-loss SVM on a video-level sample of the training frames."""
    from sklearn.svm import LinearSVC

    x_tr = np.asarray(train_features, dtype=np.float64)
    y_tr = np.asarray(train_labels).astype(int)
    mask = sample_videos(train_groups, y_tr, fraction, seed) if fraction < 1 else np.ones(len(y_tr), bool)
    if len(np.unique(y_tr[mask])) < 2:
        raise ClassMissingInSample("linear probing needs at least two classes in the training sample")
    clf = LinearSVC(loss="hinge", C=C, dual=True, max_iter=50_000, random_state=seed)
    clf.fit(x_tr[mask], y_tr[mask])
    pred = clf.predict(np.asarray(test_features, dtype=np.float64))
    out = compute_metrics(pred, np.asarray(test_labels).astype(int), "single")
    out["n_train_frames"] = int(mask.sum())
    out["n_train_videos"] = int(len(np.unique(np.asarray(train_groups)[mask])))
    return out
