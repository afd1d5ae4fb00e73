"""Frame loading, procedural synthetic frames, and view augmentations."""

from __future__ import annotations

import colorsys
import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SchemaError

SYNTH_PREFIX = "synth:"
_GOLDEN = 0.6180339887498949


def _ref_seed(ref: str) -> int:
    return int.from_bytes(hashlib.blake2b(ref.encode("utf-8"), digest_size=8).digest(), "little")


def render_synthetic(ref: str, size: int) -> np.ndarray:
    """Render a ``synth:seed:concept:variant:step:frame`` reference as an RGB float32 image.

    Concept sets the base hue, variant the top-to-bottom brightness slope, and
    the clip step the radius of a bright central disk. Per-frame noise is
    seeded by the reference string, so rendering is a pure function of
    ``(ref, size)``.
    """
    try:
        _, _seed, concept, variant, step, _frame = ref.split(":")
        concept, variant, step = int(concept), int(variant), int(step)
    except ValueError:
        raise SchemaError(None, "frames", f"malformed synthetic frame reference {ref!r}") from None
    rng = np.random.default_rng(_ref_seed(ref))
    hue = (concept * _GOLDEN) % 1.0
    base = np.array(colorsys.hsv_to_rgb(hue, 0.7, 0.6), dtype=np.float32)
    y = (np.arange(size, dtype=np.float32) + 0.5) / size
    slope = 0.8 * (2.0 * ((variant * _GOLDEN + 0.25) % 1.0) - 1.0)
    rows = 1.0 + slope * (y - 0.5)
    yy, xx = np.meshgrid(y, y, indexing="ij")
    radius = 0.12 + 0.07 * (step % 5)
    disk = ((yy - 0.5) ** 2 + (xx - 0.5) ** 2 < radius**2).astype(np.float32) * 0.25
    img = base[None, None, :] * rows[:, None, None] + disk[:, :, None]
    img = img + rng.normal(0.0, 0.03, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _load_image_file(path: str, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


@lru_cache(maxsize=1024)
def _cached_frame(ref: str, size: int) -> np.ndarray:
    img = render_synthetic(ref, size) if ref.startswith(SYNTH_PREFIX) else _load_image_file(ref, size)
    img.setflags(write=False)
    return img


def load_frame(ref: str, size: int) -> np.ndarray:
    """Return frame ``ref`` as a read-only ``(size, size, 3)`` float32 array in [0, 1]."""
    return _cached_frame(ref, size)


def load_frames(refs, size: int) -> np.ndarray:
    return np.stack([load_frame(r, size) for r in refs])


@dataclass(frozen=True)
class AugmentConfig:
    crop_scale: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    enabled: bool = True


def augment_clip(frames: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Apply one random crop/flip/colour jitter consistently to every frame of a clip."""
    if not cfg.enabled:
        return frames
    _, h, w, _ = frames.shape
    scale = rng.uniform(*cfg.crop_scale)
    ch = max(1, int(round(h * np.sqrt(scale))))
    cw = max(1, int(round(w * np.sqrt(scale))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    # nearest-neighbour resize back to the input size
    rows = top + (np.arange(h) * ch) // h
    cols = left + (np.arange(w) * cw) // w
    out = frames[:, rows][:, :, cols]
    if rng.random() < cfg.flip_prob:
        out = out[:, :, ::-1]
    b = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness)
    c = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)
    mean = out.mean(axis=(1, 2, 3), keepdims=True)
    out = (out - mean) * c + mean
    out = out * b
    return np.clip(out, 0.0, 1.0).astype(np.float32)
