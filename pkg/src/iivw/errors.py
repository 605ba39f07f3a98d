"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and numeric failures
from :class:`NumericError`; the CLI maps the two families to distinct exit
codes.
"""


class IIVWError(Exception):
    pass


class ValidationError(IIVWError, ValueError):
    pass


class NumericError(IIVWError, ArithmeticError):
    pass


class NonMonotoneVisits(ValidationError):
    pass


class OffGridTime(ValidationError):
    pass


class EmptyTreatmentArm(ValidationError):
    pass


class RaggedCovariates(ValidationError):
    pass


class MissingBaselineVisit(ValidationError):
    pass


class DuplicateSubject(ValidationError):
    pass


class NoPriorObservation(ValidationError):
    pass


class SchemaMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NoEvents(NumericError):
    pass


class SingularInformation(NumericError):
    pass


class Diverged(NumericError):
    pass


class Separation(NumericError):
    pass


class SingularDesign(NumericError):
    pass


class RankDeficient(NumericError):
    pass


class DegenerateGaps(NumericError):
    pass


class MissingBucket(NumericError):
    pass


class ProbabilityOverflow(NumericError):
    pass


class TooManyFailures(NumericError):
    pass
