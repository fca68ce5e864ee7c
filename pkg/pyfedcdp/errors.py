"""Exception types raised by pyfedcdp."""
from __future__ import annotations

from typing import Optional

__all__ = [
    "AccountingError",
    "ConfigError",
    "DatasetError",
    "DegenerateSensitivityError",
    "NumericError",
    "ShapeError",
]


class ShapeError(ValueError):
    """A tensor or layer does not have the shape the model expects."""


class NumericError(ArithmeticError):
    """A non-finite value appeared in an intermediate result."""

    def __init__(self, message: str, *, layer: Optional[int] = None) -> None:
        if layer is not None:
            message = f"{message} (layer {layer})"
        super().__init__(message)
        self.layer = layer


class DegenerateSensitivityError(ValueError):
    """Every clipped gradient in a batch is zero, so S would be 0."""


class AccountingError(RuntimeError):
    """A log-moment of the privacy loss could not be evaluated."""

    def __init__(self, message: str, *, order: int, entry: int) -> None:
        super().__init__(f"{message} (order λ={order}, ledger step {entry})")
        self.order = order
        self.entry = entry


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``field`` is ``section.key`` when the problem can be pinned to a key and
    ``line`` is the 1-based line of that key in the source text, if present.
    """

    def __init__(
        self, message: str, *, field: Optional[str] = None, line: Optional[int] = None
    ) -> None:
        self.field = field
        self.line = line
        self.reason = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(self.field)
        prefix = f"[{', '.join(where)}] " if where else ""
        return f"{prefix}{self.reason}"


class DatasetError(OSError):
    """A dataset could not be read or fetched."""
