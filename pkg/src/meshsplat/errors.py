"""Exception hierarchy shared by all meshsplat modules."""

from __future__ import annotations


class MeshSplatError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MeshSplatError):
    """An input value violates a documented precondition or invariant."""


class HandednessError(ValidationError):
    """A matrix that should be a proper rotation has determinant -1."""


class GeometryError(MeshSplatError):
    """A geometric operation failed; carries the offending face index when known."""

    def __init__(self, message: str, face_index: int | None = None):
        super().__init__(message)
        self.face_index = face_index


class DegenerateGeometryError(GeometryError):
    """A triangle or splat is too close to degenerate to process."""


class SoupExtractionError(GeometryError):
    """One or more Gaussians could not be converted to soup triangles.

    ``indices`` lists every offending input position.
    """

    def __init__(self, message: str, indices: list[int]):
        super().__init__(message)
        self.indices = list(indices)


class FormatError(MeshSplatError):
    """A file does not follow its documented format.

    ``offset`` is a byte offset for binary formats; ``line``/``column`` locate
    errors in text formats; ``location`` is a schema path like ``steps[2].factors``.
    """

    def __init__(
        self,
        message: str,
        *,
        offset: int | None = None,
        line: int | None = None,
        column: int | None = None,
        location: str | None = None,
    ):
        parts = [message]
        if offset is not None:
            parts.append(f"(byte offset {offset})")
        if line is not None:
            pos = f"line {line}" if column is None else f"line {line}, column {column}"
            parts.append(f"({pos})")
        if location is not None:
            parts.append(f"(at {location})")
        super().__init__(" ".join(parts))
        self.offset = offset
        self.line = line
        self.column = column
        self.location = location


class RangeError(MeshSplatError):
    """A scalar argument lies outside its allowed interval."""
