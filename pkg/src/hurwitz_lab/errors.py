"""Exception types raised by the library.

Every error carries a short machine-readable ``code`` so that the CLI and the
JSON reports can surface failures without parsing messages.
"""


class HurwitzLabError(Exception):
    code = "ERROR"

    def __init__(self, message="", **details):
        super().__init__(message or self.code)
        self.details = details


class UniquenessViolation(HurwitzLabError):
    code = "UNIQUENESS_VIOLATION"


class DivisionByZero(HurwitzLabError, ZeroDivisionError):
    code = "DIVISION_BY_ZERO"


class BothZero(HurwitzLabError, ValueError):
    code = "BOTH_ZERO"


class ZeroInput(HurwitzLabError, ValueError):
    code = "ZERO_INPUT"


class OutOfDomain(HurwitzLabError, ValueError):
    code = "OUT_OF_DOMAIN"


class NoStabilization(HurwitzLabError):
    code = "NO_STABILIZATION"


class ResolutionTooCoarse(HurwitzLabError):
    code = "RESOLUTION_TOO_COARSE"


class TailTooLarge(HurwitzLabError):
    code = "TAIL_TOO_LARGE"


class NoConvergence(HurwitzLabError):
    code = "NO_CONVERGENCE"


class BracketFailure(HurwitzLabError):
    code = "BRACKET_FAILURE"


class DegenerateSample(HurwitzLabError, ValueError):
    code = "DEGENERATE_SAMPLE"


class MissingInput(HurwitzLabError):
    code = "MISSING_INPUT"


class UsageError(HurwitzLabError, ValueError):
    code = "USAGE_ERROR"
