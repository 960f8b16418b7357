"""Exceptions raised by bmacopula."""

import numpy as np


class BmaCopulaError(Exception):
    """Base class for every error raised by the package."""


class DomainError(BmaCopulaError, ValueError):
    """An argument lies outside the domain of the operation."""


class BracketingError(DomainError):
    """A root-finding target lies outside the supplied bracket."""


class DecompositionError(BmaCopulaError, np.linalg.LinAlgError):
    """A matrix could not be Cholesky factorised."""

    def __init__(self, pivot: int, message: str | None = None) -> None:
        self.pivot = pivot
        super().__init__(
            message or f"Matrix is not positive definite (failing pivot {pivot})."
        )


class FitError(BmaCopulaError):
    """A BMA model could not be fitted to its training set."""


class EstimationError(BmaCopulaError):
    """A copula correlation matrix could not be estimated."""


class ParseError(BmaCopulaError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class SchemaError(BmaCopulaError):
    """A dataset file does not follow the expected column or unit schema."""


class WindowError(BmaCopulaError):
    """Not enough complete history to build a rolling training window."""

    def __init__(self, available: int, width: int, message: str | None = None) -> None:
        self.available = available
        self.width = width
        super().__init__(
            message
            or f"Only {available} complete days available, {width} needed for the window."
        )


class ConfigError(BmaCopulaError):
    """A run configuration or synthetic spec is invalid."""


class DependencyError(BmaCopulaError):
    """A pipeline stage was started before the stage it depends on."""


class EmptyReportError(BmaCopulaError):
    """Verification found no scoreable cases."""
