"""Exception hierarchy shared by all modules."""


class JMSLError(Exception):
    """Base class for package errors."""


class DomainError(JMSLError, ValueError):
    """An argument lies outside the domain of an operation."""


class BracketError(JMSLError, ValueError):
    """Root finding was given an interval without a sign change."""


class NotPositiveDefiniteError(JMSLError, ValueError):
    """A covariance matrix failed its Cholesky factorization."""


class UnsupportedOperationError(JMSLError):
    pass


class StratificationError(JMSLError, ValueError):
    """Too few subjects or events to build the requested folds."""


class PreconditionError(JMSLError, ValueError):
    pass


class CalibrationError(JMSLError, RuntimeError):
    """Censoring calibration could not bracket the target rate."""


class SpecError(JMSLError, ValueError):
    """An invalid model, generator or scenario specification."""


class InitializationError(JMSLError, RuntimeError):
    """MCMC started from a point with a non-finite posterior."""


class NumericalError(JMSLError, RuntimeError):
    pass


class UndefinedWeightError(JMSLError, ArithmeticError):
    """An IPCW weight would divide by a zero censoring-survival estimate."""


class PlanError(JMSLError, KeyError):
    """A prediction required by a scoring rule is missing."""


class OptimizationError(JMSLError, RuntimeError):
    pass


class SchemaError(JMSLError, ValueError):
    """Malformed input file; ``pointer`` locates the offending element."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
