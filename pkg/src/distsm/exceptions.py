"""Exception hierarchy shared by every module.

Each class carries a ``kind`` string that the CLI echoes into its error JSON
and maps onto an exit code.
"""


class DsmError(Exception):
    kind = "error"
    exit_code = 1

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def to_dict(self):
        out = {"kind": self.kind, "message": str(self)}
        if self.diagnostics:
            out["diagnostics"] = {k: _jsonable(v) for k, v in self.diagnostics.items()}
        return out


class ConfigurationError(DsmError, ValueError):
    """Malformed configuration: unknown names, inconsistent shapes, bad params."""

    kind = "configuration"
    exit_code = 2


class DomainError(DsmError, ValueError):
    """An argument lies outside the domain of the operation."""

    kind = "domain"
    exit_code = 2


class MissingArtifactError(DsmError, FileNotFoundError):
    kind = "missing_artifact"
    exit_code = 3


class NumericError(DsmError, ArithmeticError):
    """Non-finite values, failed solves or ill-conditioned systems."""

    kind = "numeric"
    exit_code = 4


def _jsonable(value):
    try:
        import numpy as np

        if isinstance(value, np.generic):
            return value.item()
        if isinstance(value, np.ndarray):
            return value.tolist()
    except ImportError:  # pragma: no cover
        pass
    return value
