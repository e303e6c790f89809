"""Exception hierarchy shared by every module.

The CLI maps :class:`InputError` (and its subclasses) to exit code 2 and
:class:`SolverError` to exit code 3.
"""

from __future__ import annotations


class LatentCartoError(Exception):
    """Base class for all library errors."""


class InputError(LatentCartoError, ValueError):
    """A precondition on the caller's input was violated."""


class OutOfDomainError(InputError):
    """A point lies outside the region where a field or map is defined."""

    def __init__(self, message: str, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class FormatError(InputError):
    """A file does not follow the expected on-disk format."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = ""
        if offset is not None:
            where = f" (byte offset {offset})"
        elif line is not None:
            where = f" (line {line})"
        super().__init__(message + where)
        self.offset = offset
        self.line = line


class SolverError(LatentCartoError, RuntimeError):
    """A numerical procedure failed to produce a valid result."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
