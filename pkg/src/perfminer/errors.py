"""Exception hierarchy shared by every perfminer module."""


class PerfminerError(Exception):
    """Base class for all errors raised by perfminer."""


class ValidationError(PerfminerError, ValueError):
    """A value violates a domain invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(PerfminerError, ValueError):
    """Invalid configuration or argument."""


class RecordParseError(PerfminerError):
    """A JSONL line could not be decoded into a record."""

    def __init__(self, line_no: int, message: str, source: str | None = None):
        where = f"{source}:{line_no}" if source else f"line {line_no}"
        super().__init__(f"{where}: {message}")
        self.line_no = line_no
        self.source = source


class ResponseParseError(PerfminerError):
    """An LLM response did not contain a usable answer."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class TransportError(PerfminerError):
    """The LLM endpoint could not be reached after all retries."""


class PermanentRequestError(TransportError):
    """The LLM endpoint rejected the request (4xx); retrying will not help."""

    def __init__(self, status_code: int, message: str):
        super().__init__(f"HTTP {status_code}: {message}")
        self.status_code = status_code


class AuthError(PermanentRequestError):
    pass


class InsufficientDataError(PerfminerError):
    """Not enough rows of some class to satisfy a sampling request."""

    def __init__(self, message: str, available: dict):
        super().__init__(message)
        self.available = available


class DegenerateCorpusError(PerfminerError):
    """Training data contains a single class."""


class TrainingError(PerfminerError):
    """Optimization produced a non-finite loss."""


class DegenerateStatisticError(PerfminerError):
    """A statistic is undefined for the given input."""


class CheckpointError(PerfminerError):
    """A resumable run was interrupted; cached progress has been saved."""


class DiffParseError(PerfminerError):
    pass


class GitError(PerfminerError):
    pass


class BenchmarkError(PerfminerError):
    """A benchmark run was aborted; no partial measurements are reported."""
