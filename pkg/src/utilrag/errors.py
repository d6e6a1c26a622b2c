"""Exception types shared across the engine.

Input problems subclass ``ValueError`` so callers that only care about
"bad argument" can catch them generically. The CLI maps each family to an
exit code (see :mod:`utilrag.cli`).
"""

from __future__ import annotations


class RagError(Exception):
    """Base class for every error raised deliberately by this package."""


class InputError(RagError, ValueError):
    """Malformed input, violated precondition, or bad configuration."""


class DimensionMismatch(InputError):
    pass


class DuplicateId(InputError):
    pass


class EmptyCorpus(InputError):
    pass


class NonPositiveTemperature(InputError):
    pass


class InsufficientDocs(InputError):
    pass


class IdSetMismatch(InputError):
    pass


class ZeroInSecondArgumentWithNonzeroFirst(InputError):
    pass


class MissingSentinel(InputError):
    pass


class KExceedsListLength(InputError):
    pass


class CandidatePoolMismatch(InputError):
    pass


class EmptyDocs(InputError):
    pass


class LengthMismatch(InputError):
    pass


class NonPositiveBeta(InputError):
    pass


class EmptyOriginal(InputError):
    pass


class EmptyGolds(InputError):
    pass


class EmptyDataset(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ArtifactError(InputError):
    """An on-disk artifact is corrupt, truncated, or of an unknown version."""


class ConfigError(InputError):
    """Malformed or inconsistent run configuration."""


class OracleError(RagError):
    """The LLM oracle could not produce a usable answer."""


class RemoteUnavailable(OracleError):
    pass


class MalformedResponse(OracleError):
    pass


class OracleFailure(OracleError):
    """Raised by training/corpus code when the oracle fails; may carry a
    checkpoint of the work done so far."""

    def __init__(self, message: str, partial=None, checkpoint_path=None):
        super().__init__(message)
        self.partial = partial
        self.checkpoint_path = checkpoint_path


class DivergedLoss(RagError, ArithmeticError):
    pass
