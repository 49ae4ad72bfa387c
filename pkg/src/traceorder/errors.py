"""Exception types shared across the package."""

from __future__ import annotations


class TraceOrderError(Exception):
    """Base class for all package errors."""


class CycleDetected(TraceOrderError):
    def __init__(self, i: int, j: int):
        super().__init__(f"relation is cyclic: {i} and {j} reach each other")
        self.i = i
        self.j = j


class UnknownAction(TraceOrderError, KeyError):
    def __init__(self, name):
        super().__init__(f"unknown action {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class TooLarge(TraceOrderError):
    """Raised when exact linear-extension counting would exceed the size cap."""

    def __init__(self, m: int, cap: int):
        super().__init__(f"{m} elements exceeds the exact-counting cap of {cap}")
        self.m = m
        self.cap = cap


class EmptyTrace(TraceOrderError):
    pass


class SchemaError(TraceOrderError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DuplicateAction(TraceOrderError):
    def __init__(self, trace_id: str, name: str):
        super().__init__(f"trace {trace_id!r} repeats action {name!r}")
        self.trace_id = trace_id
        self.name = name


class TargetUnreachable(TraceOrderError):
    def __init__(self, realized: float, attempts: int):
        super().__init__(
            f"coverage target not reached: realized {realized:.4f} after {attempts} attempts"
        )
        self.realized = realized
        self.attempts = attempts


class EmptyChain(TraceOrderError):
    pass


class CatalogMismatch(TraceOrderError):
    pass


class InvalidRho(TraceOrderError, ValueError):
    pass


class RegistryGap(TraceOrderError):
    def __init__(self, action: str):
        super().__init__(f"IO registry has no entry for action {action!r}")
        self.action = action
