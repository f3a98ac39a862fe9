"""Exception hierarchy shared by every kpuf module.

Each class carries a ``category`` used by the CLI for its
``ERROR:<category>:`` prefix.
"""


class KpufError(Exception):
    category = "internal"


class DomainError(KpufError, ValueError):
    category = "domain"


class CapacityError(DomainError):
    category = "capacity"


class TamperError(KpufError):
    """No candidate nibble reproduces a ciphertext symbol (wrong image or altered data)."""

    category = "tamper"


class DecodabilityError(KpufError):
    category = "decodability"


class ParseError(KpufError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateDataError(DomainError):
    category = "degenerate"


class ConvergenceError(KpufError):
    category = "convergence"

    def __init__(self, message, offending=None):
        super().__init__(message)
        self.offending = dict(offending or {})


class EntropyError(KpufError, OSError):
    category = "environment"
