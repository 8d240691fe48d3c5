"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations

from typing import Any


class MapsError(Exception):
    """Base class for every domain error raised by this package."""


# --- SLS documents -----------------------------------------------------------


class SLSValidationError(MapsError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class MissingField(SLSValidationError):
    def __init__(self, path: str):
        super().__init__(path, "required field is missing")


class BadEnum(SLSValidationError):
    def __init__(self, path: str, got: Any):
        self.got = got
        super().__init__(path, f"value {got!r} is not one of the allowed values")


class OutOfRange(SLSValidationError):
    def __init__(self, path: str, got: Any):
        self.got = got
        super().__init__(path, f"value {got!r} is out of range")


class BadType(SLSValidationError):
    def __init__(self, path: str, got: Any, expected: str):
        self.got = got
        super().__init__(path, f"expected {expected}, got {type(got).__name__}")


class DuplicateLabel(SLSValidationError):
    def __init__(self, label: str):
        self.label = label
        super().__init__("users", f"duplicate label {label!r}")


# --- perception --------------------------------------------------------------


class DegenerateBox(MapsError, ValueError):
    pass


class OutOfFrame(MapsError, ValueError):
    pass


# --- agents / fusion ---------------------------------------------------------


class SchemaViolation(MapsError):
    """A model returned a tree that does not conform to the expected schema.

    The offending tree is kept on ``tree`` for diagnostics.
    """

    def __init__(self, message: str, tree: Any = None):
        self.tree = tree
        super().__init__(message)


class CountBoundViolation(MapsError):
    def __init__(self, got: int, bound: int):
        self.got = got
        self.bound = bound
        super().__init__(f"fusion produced {got} users, bound is {bound}")


# --- backends ----------------------------------------------------------------


class BackendError(MapsError):
    pass


class TransportError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class AuthError(BackendError):
    pass


class AttachmentTooLarge(BackendError):
    pass


class FixtureIoError(BackendError, OSError):
    pass


# --- scenarios ---------------------------------------------------------------


class PlacementFailure(MapsError):
    pass


class ParseError(MapsError):
    pass


class MissingPart(MapsError):
    def __init__(self, part: str, path: Any):
        self.part = part
        super().__init__(f"{part} not found: {path}")


# --- evaluation --------------------------------------------------------------


class UndefinedAccuracy(MapsError, ZeroDivisionError):
    pass


class EmptySamples(MapsError, ValueError):
    pass


class InconsistentStages(MapsError, ValueError):
    pass
