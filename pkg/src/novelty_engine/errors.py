"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class NoveltyEngineError(Exception):
    """Base class for all errors raised by this package."""


class BudgetExceeded(NoveltyEngineError):
    pass


class FixtureMiss(NoveltyEngineError):
    def __init__(self, digest: str, description: str = "") -> None:
        self.digest = digest
        msg = f"no recorded fixture for digest {digest}"
        if description:
            msg += f" ({description})"
        super().__init__(msg)


class ProviderError(NoveltyEngineError):
    def __init__(self, message: str, attempts: int = 1, status: int | None = None) -> None:
        self.attempts = attempts
        self.status = status
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")


class MalformedCompletion(NoveltyEngineError):
    pass


class EmptyCompletion(NoveltyEngineError):
    pass


class ParseFailed(NoveltyEngineError):
    pass


class MissingTitle(ParseFailed):
    pass


class ZeroVector(NoveltyEngineError):
    pass


class FetchFailed(NoveltyEngineError):
    def __init__(self, causes: dict[str, str]) -> None:
        self.causes = dict(causes)
        detail = "; ".join(f"{src}: {why}" for src, why in self.causes.items())
        super().__init__(f"could not acquire PDF from any source ({detail})")


class OcrFailed(NoveltyEngineError):
    pass


class NoIntroFound(NoveltyEngineError):
    pass


class LengthMismatch(NoveltyEngineError, ValueError):
    pass


class EmptyInput(NoveltyEngineError, ValueError):
    pass


class SchemaError(NoveltyEngineError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        super().__init__(f"{path}: {reason}")


class StageError(NoveltyEngineError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
