"""Error types raised by ionhom solvers and loaders"""
from typing import Any, Dict, Optional


class IonHomError(Exception):
    """Base class for every ionhom failure"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_record(self) -> Dict[str, Any]:
        """Machine-readable form written as error.json by the CLI"""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class ResolutionMismatchError(IonHomError, ValueError):
    """Geometry parameter does not land on grid faces"""


class ConfigError(IonHomError, ValueError):
    """Run configuration file is malformed"""


class MembraneDomainError(IonHomError, ValueError):
    """Membrane law evaluated outside its domain"""


class ValidationFailedError(IonHomError):
    """Initial data or parameters failed the standing assumptions"""

    def __init__(self, message: str, report=None):
        details = {"failed": [c.name for c in report.failures]} if report is not None else {}
        super().__init__(message, details)
        self.report = report


class SingularSystemError(IonHomError):
    """Linear system has more null directions than the gauge removes"""


class NotConvergedError(IonHomError):
    """Iterative linear solve hit its iteration cap"""


class IncompatibleRHSError(IonHomError):
    """Right-hand side has a significant component in the null space"""


class PicardDivergenceError(IonHomError):
    """Picard iteration hit its cap without meeting the tolerance"""


class PositivityLossError(IonHomError):
    """A concentration became nonpositive"""


class InvariantViolationError(IonHomError):
    """A structural property of the discrete system did not hold"""
