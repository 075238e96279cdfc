"""Exception types raised across the package."""


class VibnetError(Exception):
    """Base class for all package errors."""


class DimensionError(VibnetError, ValueError):
    """Array shapes do not compose."""


class StateError(VibnetError, RuntimeError):
    """An operation was called in the wrong state (e.g. backward before forward)."""


class InputError(VibnetError, ValueError):
    """Invalid user-supplied data or arguments."""


class DomainError(VibnetError, ValueError):
    """A numeric argument lies outside the function's domain."""


class ParseError(InputError):
    """Malformed binary payload; carries the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateArchitectureError(VibnetError, ValueError):
    """Pruning would remove every unit of a layer."""

    def __init__(self, layer):
        super().__init__(f"degenerate architecture: pruning empties layer {layer!r}")
        self.layer = layer


class DivergenceError(VibnetError, RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer
