"""Exception types shared across the toolchain."""


class SynthQaError(Exception):
    """Base class for all synthqa errors."""


class ParseError(SynthQaError):
    """A file or completion is malformed. Carries a locus when one is known."""

    def __init__(self, message: str, *, path: str | None = None, locus: str | None = None):
        self.path = path
        self.locus = locus
        where = ""
        if path:
            where += f" [file: {path}]"
        if locus:
            where += f" [at: {locus}]"
        super().__init__(message + where)


class SpanError(SynthQaError):
    """An answer span does not match its context. Names the offending QA pair."""

    def __init__(self, message: str, *, qa_id: str):
        self.qa_id = qa_id
        super().__init__(f"{message} (qa id: {qa_id})")


class IdCollision(SynthQaError):
    """Two QA pairs share an id."""

    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"duplicate qa ids: {', '.join(self.ids)}")


class InsufficientData(SynthQaError):
    """Not enough original QA pairs to draw the requested exemplars."""


class TemplateError(SynthQaError):
    """A prompt template cannot be rendered from the given inputs."""


class ProviderError(SynthQaError):
    """Non-retryable provider failure (auth, bad request, malformed reply)."""


class TransientError(SynthQaError):
    """Retryable provider failure (rate limit, 5xx, connection reset)."""


class Timeout(TransientError):
    """A request attempt exceeded the configured timeout."""


class RetriesExhausted(SynthQaError):
    """All retry attempts failed. Wraps the last transient error."""

    def __init__(self, attempts: int, last_error: Exception | None = None):
        self.attempts = attempts
        self.last_error = last_error
        detail = f": {last_error}" if last_error is not None else ""
        super().__init__(f"gave up after {attempts} attempts{detail}")


class UnmatchedRequest(SynthQaError):
    """A scripted mock received a request no rule matches (test authoring bug)."""


class Unalignable(SynthQaError):
    """A generated answer string could not be anchored to its context."""
