"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`HierVLPError`
so callers (and the CLI) can tell contract violations apart from bugs.
"""

from __future__ import annotations


class HierVLPError(Exception):
    """Base class for all package errors."""


# data model
class MissingFile(HierVLPError, FileNotFoundError):
    pass


class SchemaError(HierVLPError, ValueError):
    def __init__(self, line: int | None, field: str, message: str = "") -> None:
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}field {field!r}" + (f": {message}" if message else ""))


class IntegrityError(HierVLPError, ValueError):
    pass


class EmptyInput(HierVLPError, ValueError):
    pass


class InvalidSpec(HierVLPError, ValueError):
    pass


# encoders
class ShapeMismatch(HierVLPError, ValueError):
    pass


class EmptyText(HierVLPError, ValueError):
    pass


class EmptyList(HierVLPError, ValueError):
    pass


class DimensionMismatch(HierVLPError, ValueError):
    pass


class VersionMismatch(HierVLPError, ValueError):
    pass


# losses
class BatchMismatch(HierVLPError, ValueError):
    pass


class RaggedRetrieval(HierVLPError, ValueError):
    pass


# memory bank
class NonSilentVideo(HierVLPError, ValueError):
    pass


class EmptyBank(HierVLPError, ValueError):
    pass


# trainer
class InvalidConfig(HierVLPError, ValueError):
    pass


class SilentClipInBatch(HierVLPError, ValueError):
    pass


class NonNarrativeVideo(HierVLPError, ValueError):
    pass


# evaluation
class MissingTemplate(HierVLPError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class NoPrompts(HierVLPError, ValueError):
    pass


class LengthMismatch(HierVLPError, ValueError):
    pass


class ClassMissingInSample(HierVLPError, ValueError):
    pass
