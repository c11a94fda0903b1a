"""
Exceptions raised by the gateway modules.

Every error the gateway reports derives from GatewayError so the admin API
and the CLI can turn it into a JSON error or an exit code in one place.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional


class GatewayError(Exception):
    """Base class for all gateway errors."""

    status: int = 400

    def to_dict(self) -> Dict[str, Any]:
        return {"error": str(self), "type": type(self).__name__}


class ConfigError(GatewayError):
    pass


# -------------------------
# DSL
# -------------------------
class EvaluationError(GatewayError):
    """A pipeline stage could not be applied. `stage` is the 0-based position."""

    def __init__(self, message: str, stage: Optional[int] = None, function: str = ""):
        super().__init__(message)
        self.stage = stage
        self.function = function

    def __str__(self) -> str:
        base = super().__str__()
        if self.stage is None:
            return base
        return f"{base} (stage {self.stage}, {self.function})"


class EmptyListError(EvaluationError):
    def __init__(self, message: str = "empty list", stage: Optional[int] = None, function: str = ""):
        super().__init__(message, stage, function)


class KindMismatch(EvaluationError):
    pass


class NotFound(GatewayError):
    status = 404

    def __init__(self, message: str = "no consistent program", visited: int = 0):
        super().__init__(message)
        self.visited = visited


class ExampleConflict(GatewayError):
    pass


class ParseError(GatewayError):
    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnknownIndex(GatewayError):
    pass


# -------------------------
# Protocol adapter / discovery
# -------------------------
class ConnectFailure(GatewayError):
    """All adapters failed. `attempts` holds one log entry per adapter."""

    def __init__(self, message: str, attempts: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.attempts = list(attempts or [])

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["attempts"] = self.attempts
        return out


class MalformedMessage(GatewayError):
    pass


class AuthenticationFailed(GatewayError):
    status = 403


class InvalidAddress(GatewayError):
    pass


# -------------------------
# Device manager
# -------------------------
class ArchiveCorrupt(GatewayError):
    pass


# -------------------------
# Interoperability / logic
# -------------------------
class NoProgram(GatewayError):
    status = 404


class DegenerateTrace(GatewayError):
    pass


class MissingReading(GatewayError):
    pass


# -------------------------
# Data handler
# -------------------------
class DepthExceeded(GatewayError):
    pass


class EntityUnsupported(GatewayError):
    pass


class MultipleRoots(GatewayError):
    pass


# -------------------------
# Statistics
# -------------------------
class DegenerateInput(GatewayError):
    pass


class Unreachable(GatewayError):
    pass
