"""Exception types shared across the package."""


class RtoptError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(RtoptError):
    """Vector or matrix dimensions do not agree."""


class IndexOutOfRange(RtoptError):
    """A row or column index falls outside the declared shape."""


class ParseError(RtoptError):
    """A file or byte stream could not be decoded."""


class ValidationError(RtoptError):
    """A structural invariant of the problem data is violated."""


class ConfigError(RtoptError):
    """Invalid configuration values."""


class DomainError(RtoptError):
    """Input lies outside the mathematical domain of a function."""


class EvalError(RtoptError):
    """A function term failed to evaluate.

    Carries the responsible worker and term when known so distributed
    failures can be traced back to their origin.
    """

    def __init__(self, message, worker_id=None, term_id=None):
        self.worker_id = worker_id
        self.term_id = term_id
        parts = []
        if worker_id is not None:
            parts.append(f"worker {worker_id}")
        if term_id is not None:
            parts.append(f"term {term_id}")
        prefix = f"[{', '.join(parts)}] " if parts else ""
        super().__init__(prefix + message)
        self.message = message


class WorkerLost(RtoptError):
    """A follower died or stopped responding; the run must abort."""


class TransportError(RtoptError):
    """Worker spawn, bind, connect, or handshake failure."""
