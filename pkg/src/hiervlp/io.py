"""Atomic file writes and the versioned array container used by checkpoints and banks."""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .errors import MissingFile, SchemaError, VersionMismatch

_META_KEY = "__meta__"


def _atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_container(
    path: str | os.PathLike, kind: str, format_version: int,
    meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray],
) -> None:
    """Write ``arrays`` plus a JSON header into one uncompressed npz file."""
    header = {"kind": kind, "format_version": format_version, "package_version": __version__, **meta}
    buf = io.BytesIO()
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload[_META_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(buf, **payload)
    _atomic_write_bytes(path, buf.getvalue())


def load_container(
    path: str | os.PathLike, kind: str, format_version: int,
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"file not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise SchemaError(None, "<container>", f"unreadable {kind} file {path}: {exc}") from None
    if _META_KEY not in arrays:
        raise SchemaError(None, _META_KEY, f"{path} has no header")
    meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8"))
    if meta.get("kind") != kind:
        raise SchemaError(None, "kind", f"expected a {kind} file, got {meta.get('kind')!r}")
    if meta.get("format_version") != format_version:
        raise VersionMismatch(
            f"{kind} format version {meta.get('format_version')!r}, expected {format_version}"
        )
    return meta, arrays
