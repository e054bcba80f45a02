"""Exception hierarchy for the package.

``InvalidInputError`` covers domain and format violations (bad outcomes,
unbalanced panels, malformed options); ``NumericalError`` covers
conditioning and solver failures.  The CLI maps the former to exit code 2
and the latter to exit code 3.
"""


class CcePanelError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CcePanelError, ValueError):
    """Input violates a documented domain or format constraint."""


class PanelFormatError(InvalidInputError):
    """A panel CSV file is malformed, unbalanced, or has duplicate cells."""


class NumericalError(CcePanelError, RuntimeError):
    """A numerical operation failed (singular matrix, eigensolver failure)."""


class InitializationError(NumericalError):
    """No feasible starting point could be constructed for the optimizer."""
