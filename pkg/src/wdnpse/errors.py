"""Exception hierarchy shared across the package."""


class WdnError(Exception):
    """Base class for all errors raised by wdnpse."""


class TopologyError(WdnError):
    """Structural problem with the network graph (dangling endpoint, duplicate id)."""


class InpError(WdnError):
    """Malformed or unsupported INP input.

    Carries the 1-based line and column of the offending token and the
    section it was found in, when known.
    """

    def __init__(self, message, line=None, column=None, section=None):
        self.line = line
        self.column = column
        self.section = section
        loc = []
        if section:
            loc.append(f"[{section}]")
        if line is not None:
            loc.append(f"line {line}")
            if column is not None:
                loc.append(f"col {column}")
        prefix = " ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.message = message


class ScenarioError(WdnError):
    """Invalid scenario configuration (negative variance, unknown id, ...)."""


class ConvergenceError(WdnError):
    """Nonlinear solve did not converge."""

    def __init__(self, message, residual=None, iterations=None, step=None):
        self.residual = residual
        self.iterations = iterations
        self.step = step
        super().__init__(message)


class RankDeficiencyError(WdnError):
    """System matrix is not full column rank."""

    def __init__(self, message, unmatched_rows=(), unmatched_columns=()):
        self.unmatched_rows = list(unmatched_rows)
        self.unmatched_columns = list(unmatched_columns)
        super().__init__(message)


class NumericError(WdnError):
    """Numerical failure: non-PSD covariance, negative variance, NaN."""


class DomainError(WdnError, ValueError):
    """Argument outside the domain of a component model (e.g. reverse pump flow)."""
