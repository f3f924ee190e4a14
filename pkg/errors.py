"""
Error families of the blow-up laboratory.
Every family carries its own process exit code so the CLI never crashes raw on bad input.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class; `exit_code` is what `main.py` returns for this family."""

    exit_code = 1
    tag = "Lab"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, "details": self.details}


class ConfigError(LabError):
    exit_code = 3
    tag = "Config"

    def __init__(self, message: str, line: Optional[int] = None, **details: Any):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **details)
        self.line = line


class ParameterError(LabError):
    exit_code = 4
    tag = "Params"


class DomainError(LabError):
    """Insufficient domain, domain too small, or kernel tail truncation."""

    exit_code = 5
    tag = "Domain"


class DivergenceError(LabError):
    exit_code = 6
    tag = "Solver"

    def __init__(self, message: str, s: float, **details: Any):
        super().__init__(f"{message} (s={s:.6f})", s=s, **details)
        self.s = s
        self.trajectory = None     # partial run attached by the solver


class FitRejectedError(LabError):
    """A trend fit whose residual is too large, or too little usable range to fit."""

    exit_code = 7
    tag = "Fit"


class DegreeLostError(LabError):
    exit_code = 8
    tag = "Shooting"


class CadenceError(LabError):
    exit_code = 9
    tag = "Monitor"


class QuadratureError(LabError):
    exit_code = 10
    tag = "Spectral"


class BisectionError(LabError):
    exit_code = 11
    tag = "Analysis"
