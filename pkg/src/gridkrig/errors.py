"""Exceptions shared across the package."""


class ValidationError(ValueError):
    """Bad inputs: malformed configs, inconsistent site sets, shape mismatches."""


class NumericalError(RuntimeError):
    """Linear-algebra failures that survive every regularization fallback."""
