"""Exception hierarchy shared across the package."""


class ScoreRatioError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ScoreRatioError, ValueError):
    pass


class NonSymmetric(ScoreRatioError, ValueError):
    pass


class NoConvergence(ScoreRatioError, ArithmeticError):
    pass


class NotProjector(ScoreRatioError, ValueError):
    pass


class NotOrthonormal(ScoreRatioError, ValueError):
    pass


class NotPositiveDefinite(ScoreRatioError, ValueError):
    pass


class NotScalar(ScoreRatioError, ValueError):
    pass


class EmptyBatch(ScoreRatioError, ValueError):
    pass


class NonFiniteGradient(ScoreRatioError, ArithmeticError):
    pass


class NonFiniteLoss(ScoreRatioError, ArithmeticError):
    """Training produced a non-finite loss.

    ``step`` and ``terms`` carry the diagnostic context at the failing step.
    """

    def __init__(self, message, step=None, terms=None):
        super().__init__(message)
        self.step = step
        self.terms = terms or {}


class RankExhausted(ScoreRatioError, ValueError):
    pass


class SolveFailure(ScoreRatioError, ArithmeticError):
    pass


class MalformedCheckpoint(ScoreRatioError, ValueError):
    pass


class InvalidConfig(ScoreRatioError, ValueError):
    pass


class MissingOracle(ScoreRatioError, ValueError):
    pass
