from __future__ import annotations

from pathlib import Path
from typing import Optional, Union


class BetaEnsembleException(Exception):
    pass


class DomainException(BetaEnsembleException):
    pass


class BasisException(BetaEnsembleException):
    pass


class SingularGramException(BasisException):
    def __init__(self, condition: float, threshold: Optional[float] = None) -> None:
        message = f"Gram matrix is numerically singular (condition {condition:.3e}"
        if threshold is not None:
            message += f" exceeds {threshold:.1e}"
        super().__init__(
            message + "); the (K, mu) pair is degenerate or the degree is too large"
        )
        self.condition = condition
        self.threshold = threshold


class DetCoreException(BetaEnsembleException):
    pass


class SamplingException(BetaEnsembleException):
    pass


class MetricsException(BetaEnsembleException):
    pass


class ConfigException(BetaEnsembleException):
    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        path: Optional[Union[str, Path]] = None,
    ) -> None:
        location = ""
        if path is not None:
            location = f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}" if location else message)
        self.line = line
        self.path = path


class MissingInputException(BetaEnsembleException):
    def __init__(self, message: Optional[str] = None) -> None:
        super().__init__(message or "Required input artifacts are missing")
