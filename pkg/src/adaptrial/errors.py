"""Exception types shared across the package.

Estimation errors (model fitting, cohort structure) are kept distinct from
configuration errors so the command line tool can map them to different
exit codes.
"""


class AdaptrialError(Exception):
    """Base class for all package errors."""


class EstimationError(AdaptrialError):
    """A model fit or estimator evaluation failed."""


class NonConvergence(EstimationError):
    """Iterative fitting did not converge within the iteration limit."""


class CompleteSeparation(EstimationError):
    """Logistic coefficients diverged, indicating (quasi-)separation."""


class RankDeficient(EstimationError):
    """The design matrix does not have full column rank."""


class MissingColumn(EstimationError):
    """A model term references a column absent from the data."""


class EmptyCohort1(EstimationError):
    """No patients with an observed primary endpoint in the given arm."""


class InconsistentIndicators(AdaptrialError):
    """Observation indicators violate the monotone follow-up structure."""


class ZeroVariance(EstimationError):
    """A variance estimate needed downstream is exactly zero."""


class NonPositiveVariance(EstimationError):
    """A variance that must be positive was zero or negative."""


class InvalidFraction(AdaptrialError):
    """An information fraction or weight lies outside its open interval."""


class NonPositiveTheta(AdaptrialError):
    """The observed drift is non-positive, so no effect size is available."""


class TriggerUnreachable(AdaptrialError):
    """The interim trigger condition is never met within the trial horizon."""


class BadConfig(AdaptrialError):
    """A configuration file is malformed or contains unknown settings."""


class FailureBudgetExceeded(AdaptrialError):
    """Too many Monte Carlo replications raised errors."""
