"""Knowledge base of silent videos with exact maximum-inner-product retrieval."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, VideoRecord, VideoKind
from .encoders import EncoderBundle, EncoderConfig
from .errors import DimensionMismatch, EmptyBank, IntegrityError, NonSilentVideo, SchemaError
from .io import load_container, save_container

BANK_FORMAT = 1


@dataclass(frozen=True)
class RetrievalResult:
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    @property
    def scores(self) -> list[float]:
        return [e[1] for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class MemoryEntry:
    entry_id: str
    key: np.ndarray
    value_text: np.ndarray
    value_visual: np.ndarray
    generation: int


class MemoryBank:
    """Keys from the frozen query encoder; text/visual values refreshed during training.

    Keys are stored read-only and are never rewritten after insertion.
    Retrieval is a full scan with ties broken by entry id, so it is exact and
    deterministic. Concurrent ``retrieve`` calls are safe; ``insert`` and
    ``refresh_values`` need exclusive access.
    """

    def __init__(self, dim: int, key_dim: int | None = None) -> None:
        self.dim = dim
        self.key_dim = key_dim if key_dim is not None else dim
        self.entry_ids: list[str] = []
        self._keys = np.empty((0, self.key_dim))
        self.values_text = np.empty((0, dim))
        self.values_visual = np.empty((0, dim))
        self.generations = np.empty(0, dtype=np.int64)
        self._index: dict[str, int] = {}
        # frozen query encoder state, so a saved bank can embed new queries by itself
        self.query_config: EncoderConfig | None = None
        self.query_weight: np.ndarray | None = None
        self._keys.setflags(write=False)

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    def __len__(self) -> int:
        return len(self.entry_ids)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._index

    def insert(self, entry_id: str, key, value_text, value_visual, generation: int = 0) -> None:
        if entry_id in self._index:
            raise IntegrityError(f"entry {entry_id!r} already in bank")
        key = np.asarray(key, dtype=np.float64)
        if key.shape != (self.key_dim,):
            raise DimensionMismatch(f"key has shape {key.shape}, expected ({self.key_dim},)")
        for name, val in (("value_text", value_text), ("value_visual", value_visual)):
            if np.shape(val) != (self.dim,):
                raise DimensionMismatch(f"{name} has shape {np.shape(val)}, expected ({self.dim},)")
        self._index[entry_id] = len(self.entry_ids)
        self.entry_ids.append(entry_id)
        keys = np.vstack([self._keys, key[None, :]])
        keys.setflags(write=False)
        self._keys = keys
        self.values_text = np.vstack([self.values_text, np.asarray(value_text, dtype=np.float64)[None]])
        self.values_visual = np.vstack([self.values_visual, np.asarray(value_visual, dtype=np.float64)[None]])
        self.generations = np.append(self.generations, np.int64(generation))

    def entry(self, entry_id: str) -> MemoryEntry:
        i = self._index[entry_id]
        return MemoryEntry(entry_id, self._keys[i], self.values_text[i], self.values_visual[i], int(self.generations[i]))

    def entries(self) -> list[MemoryEntry]:
        return [self.entry(e) for e in self.entry_ids]

    def scores(self, query) -> np.ndarray:
        return self._keys @ np.asarray(query, dtype=np.float64)

    def retrieve(self, query, k: int) -> RetrievalResult:
        """Top-``min(k, len(bank))`` entries by inner product with ``query``."""
        if len(self) == 0:
            raise EmptyBank("cannot retrieve from an empty bank")
        if k < 1:
            raise ValueError("k must be >= 1")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.key_dim,):
            raise DimensionMismatch(f"query has shape {query.shape}, expected ({self.key_dim},)")
        scores = self.scores(query)
        ids = np.asarray(self.entry_ids)
        k = min(k, len(scores))
        candidates = np.arange(len(scores))
        if k < len(scores):
            # everything tied with the k-th best score must stay in play for the id tie-break
            kth = np.partition(scores, len(scores) - k)[len(scores) - k]
            candidates = np.flatnonzero(scores >= kth)
        order = candidates[np.lexsort((ids[candidates], -scores[candidates]))][:k]
        return RetrievalResult(tuple((str(ids[i]), float(scores[i])) for i in order))

    def retrieve_values(self, query, k: int) -> tuple[list[str], np.ndarray, np.ndarray]:
        """Ids plus ``(k, D)`` visual and text values of the top-k entries."""
        res = self.retrieve(query, k)
        rows = [self._index[i] for i in res.ids]
        return res.ids, self.values_visual[rows], self.values_text[rows]

    def embed_query(self, title: str) -> np.ndarray:
        """Embed a title with the bank's stored frozen query encoder."""
        if self.query_config is None or self.query_weight is None:
            raise SchemaError(None, "query", "bank carries no query encoder")
        from .encoders import Projection, text_features

        return Projection(self.query_weight).forward(text_features(title, self.query_config))[0][0]

    def copy(self) -> "MemoryBank":
        out = MemoryBank(self.dim, self.key_dim)
        out.entry_ids = list(self.entry_ids)
        out._index = dict(self._index)
        out._keys = self._keys  # read-only, safe to share
        out.values_text = self.values_text.copy()
        out.values_visual = self.values_visual.copy()
        out.generations = self.generations.copy()
        out.query_config, out.query_weight = self.query_config, self.query_weight
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return (
            self.entry_ids == other.entry_ids
            and self.dim == other.dim
            and np.array_equal(self._keys, other._keys)
            and np.array_equal(self.values_text, other.values_text)
            and np.array_equal(self.values_visual, other.values_visual)
            and np.array_equal(self.generations, other.generations)
        )


def brute_force_retrieve(keys: np.ndarray, entry_ids: Sequence[str], query, k: int) -> RetrievalResult:
    """Reference top-k: one dot product per key, then a stable sort on (-score, id)."""
    if len(entry_ids) == 0:
        raise EmptyBank("cannot retrieve from an empty bank")
    q = np.asarray(query, dtype=np.float64)
    scored = [(float(np.dot(keys[i], q)), entry_ids[i]) for i in range(len(entry_ids))]
    scored.sort(key=lambda s: s[1])
    scored.sort(key=lambda s: -s[0])
    return RetrievalResult(tuple((eid, s) for s, eid in scored[:k]))


def _check_silent(videos: Iterable[VideoRecord]) -> list[VideoRecord]:
    videos = list(videos)
    for v in videos:
        if v.kind is not VideoKind.SILENT:
            raise NonSilentVideo(f"video {v.video_id!r} is {v.kind.value}, only silent videos go into the bank")
    return videos


def build_bank(silent_videos: Iterable[VideoRecord], encoders: EncoderBundle, dataset: Dataset) -> MemoryBank:
    """One entry per silent video: key from the query encoder, values from f_t / pooled f_v."""
    videos = _check_silent(silent_videos)
    bank = MemoryBank(encoders.dim, encoders.cfg.query_dim)
    bank.query_config = encoders.cfg
    bank.query_weight = encoders.params["query.proj"]
    for v in videos:
        bank.insert(
            v.video_id,
            key=encoders.encode_query(v.title),
            value_text=encoders.encode_text(v.title),
            value_visual=encoders.encode_video(v, dataset),
        )
    return bank


def refresh_values(bank: MemoryBank, encoders: EncoderBundle, dataset: Dataset) -> MemoryBank:
    """Re-encode every value with the current encoders in place; keys stay untouched."""
    for i, eid in enumerate(bank.entry_ids):
        video = dataset.videos[eid]
        bank.values_text[i] = encoders.encode_text(video.title)
        bank.values_visual[i] = encoders.encode_video(video, dataset)
    bank.generations += 1
    return bank


def save_bank(bank: MemoryBank, path, provenance: dict | None = None) -> None:
    meta = {"D": bank.dim, "key_dim": bank.key_dim, "entry_ids": bank.entry_ids}
    if provenance:
        meta["provenance"] = provenance
    arrays = {
        "keys": bank.keys, "values_text": bank.values_text,
        "values_visual": bank.values_visual, "generations": bank.generations,
    }
    if bank.query_config is not None:
        meta["query_config"] = asdict(bank.query_config)
        arrays["query_weight"] = bank.query_weight
    save_container(path, "memory_bank", BANK_FORMAT, meta, arrays)


def load_bank(path, expected_dim: int | None = None) -> MemoryBank:
    meta, arrays = load_container(path, "memory_bank", BANK_FORMAT)
    dim = int(meta["D"])
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(f"bank has D={dim}, expected {expected_dim}")
    bank = MemoryBank(dim, int(meta["key_dim"]))
    ids = list(meta["entry_ids"])
    if arrays["keys"].shape != (len(ids), bank.key_dim):
        raise SchemaError(None, "keys", "key array does not match entry list")
    bank.entry_ids = ids
    bank._index = {e: i for i, e in enumerate(ids)}
    keys = arrays["keys"].astype(np.float64, copy=True)
    keys.setflags(write=False)
    bank._keys = keys
    bank.values_text = arrays["values_text"].astype(np.float64, copy=True)
    bank.values_visual = arrays["values_visual"].astype(np.float64, copy=True)
    bank.generations = arrays["generations"].astype(np.int64, copy=True)
    if "query_config" in meta:
        bank.query_config = EncoderConfig(**meta["query_config"])
        bank.query_weight = arrays["query_weight"]
    return bank
