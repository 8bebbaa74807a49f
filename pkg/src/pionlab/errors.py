"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code (see cli.py); everything else is a bug
and surfaces as a plain Python exception.
"""


class PionlabError(Exception):
    """Base class for all package-defined failures."""


class ConfigError(PionlabError):
    """Invalid configuration: unknown keys, bad values, dimension mismatches."""


class ContractError(PionlabError):
    """A documented precondition of an operation was violated by the caller."""


class GenerationError(PionlabError):
    """Data generation failed (solver blow-up, covariance factorization, ...)."""


class TrainingDivergenceError(PionlabError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, iteration: int | None = None,
                 last_loss: float | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.last_loss = last_loss


class EvaluationError(PionlabError):
    """A model produced non-finite output during evaluation."""


class ComparisonError(PionlabError):
    """Statistical comparison could not be carried out (pairing, sample size)."""


class MetricError(PionlabError):
    """A metric is undefined for the given inputs (zero norm, zero MAD, ...)."""
