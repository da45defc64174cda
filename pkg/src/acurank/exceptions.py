"""Exception hierarchy shared across the package."""


class AcuRankError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AcuRankError, ValueError):
    """A parameter or configuration value is outside its allowed range."""


class DomainError(AcuRankError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InvalidOutcomeError(AcuRankError, ValueError):
    """A game outcome violates its structural invariants."""


class ContractViolation(AcuRankError, ValueError):
    """A caller broke a precondition that repair logic does not cover."""


class RerankerError(AcuRankError):
    """A reranker call failed; the caller may skip the batch and continue."""


class TransportError(RerankerError):
    """Network-level failure or non-2xx HTTP status.

    ``retryable`` is False for client errors (4xx other than 429), which the
    engines treat as fatal rather than skipping the batch.
    """

    def __init__(self, message, status=None, retryable=True):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class RerankerOutputError(RerankerError):
    """The reranker answered, but nothing usable could be parsed from it."""

    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class DataError(AcuRankError, ValueError):
    """Malformed or inconsistent input data (run files, qrels, corpora)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EvaluationError(AcuRankError, ValueError):
    """Invalid input to a metric."""
