"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`Case2Error`,
so the CLI can map analysis failures to exit code 1 in one place.
"""


class Case2Error(Exception):
    """Base class for analysis errors."""


# study construction
class EmptyInput(Case2Error):
    pass


class UnequalSetSizes(Case2Error):
    pass


class NarrowCountViolation(Case2Error):
    pass


class DuplicateUnit(Case2Error):
    pass


class IncompatibleHypothesis(Case2Error):
    pass


class InvalidParameter(Case2Error, ValueError):
    pass


# ingestion
class MalformedCsv(Case2Error):
    pass


class MissingColumn(Case2Error):
    pass


class BadValue(Case2Error):
    pass


class DuplicateId(Case2Error):
    pass


# matching
class SingularCovariance(Case2Error):
    pass


class NonNumericCovariate(Case2Error):
    pass


class InfeasibleStratum(Case2Error):
    def __init__(self, stratum, n_narrow, n_marginal, ratio):
        self.stratum = stratum
        self.deficit = ratio * n_narrow - n_marginal
        super().__init__(
            f"stratum {stratum!r}: {n_narrow} narrow need {ratio * n_narrow} "
            f"marginal, only {n_marginal} available (deficit {self.deficit})"
        )


class ZeroVariance(Case2Error):
    pass


# inference / oracle
class DegenerateVariance(Case2Error):
    pass


class DomainError(Case2Error, ValueError):
    pass


class TooLarge(Case2Error):
    pass


# non-negativity
class InvalidAllocation(Case2Error):
    pass


class Infeasible(Case2Error):
    pass


# calibration
class Separation(Case2Error):
    def __init__(self, covariate, message=None):
        self.covariate = covariate
        super().__init__(message or f"separation detected on {covariate!r}")


class TooFewGroups(Case2Error):
    pass


class NotConverged(Case2Error):
    pass


# simulation
class InfeasibleThetas(Case2Error):
    pass


class InsufficientMarginals(Case2Error):
    pass
