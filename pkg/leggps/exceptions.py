"""Errors raised by the leggps library.

Every error carries an ``exit_code`` used by the management commands:
2 for bad input (usage, parse, shapes), 3 for numerical failures.
"""

USAGE_ERROR = 2
NUMERIC_ERROR = 3


class LegError(Exception):
    exit_code = NUMERIC_ERROR


class DimensionMismatch(LegError, ValueError):
    exit_code = USAGE_ERROR


class NotPositiveDefinite(LegError):
    """A stage Cholesky factorization failed inside cyclic reduction."""

    def __init__(self, stage, block, cause=None):
        self.stage = stage
        self.block = block
        msg = f'block-tridiagonal matrix is not positive definite (stage {stage}, block {block})'
        if cause is not None:
            msg = f'{msg}: {cause}'
        super().__init__(msg)


class DefectiveMatrix(LegError):
    pass


class SingularResolvent(LegError):
    pass


class IllConditionedGap(LegError):
    pass


class NotPositiveDefiniteTerm(LegError, ValueError):
    pass


class UnsupportedBase(LegError, ValueError):
    exit_code = USAGE_ERROR


class UnsortedInput(LegError, ValueError):
    exit_code = USAGE_ERROR


class EmptyInput(LegError, ValueError):
    exit_code = USAGE_ERROR


class SingularNoise(LegError):
    pass


class NonFiniteObjective(LegError):
    pass


class InvalidInput(LegError, ValueError):
    """A series, parameter or option file could not be parsed."""

    exit_code = USAGE_ERROR
