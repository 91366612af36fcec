"""Exception hierarchy.

Every error carries a stable ``code`` (its class name) so the command line
front end can emit machine-readable records. Errors that describe bad input
also derive from :class:`ValueError`, matching scikit-learn's convention.
"""


class CltLabError(Exception):
    """Base class for all library errors."""

    #: exit status used by the command line front end
    exit_status = 2

    @property
    def code(self):
        return type(self).__name__


class InputError(CltLabError, ValueError):
    """Invalid input rejected before any numerical work."""


# chain construction
class NonStochastic(InputError):
    pass


class NegativeEntry(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class WeightBelowOne(InputError):
    pass


class ReducibleChain(CltLabError):
    pass


class NoSpectralGap(CltLabError):
    pass


# Poisson equation / variance
class SingularSystem(CltLabError):
    pass


class DegenerateVariance(CltLabError):
    pass


# spectral machinery
class AmbiguousDominant(CltLabError):
    pass


class NormalizationFailure(CltLabError):
    pass


class EigenvalueOnContour(CltLabError):
    pass


class EnclosureViolation(CltLabError):
    pass


class SingularResolvent(CltLabError):
    pass


class ContractionFailure(CltLabError):
    pass


class NoContractingPower(CltLabError):
    pass


class SpectralGapLost(CltLabError):
    pass


# paths and simulation
class IndexOutOfRange(InputError):
    pass


class BadInitialLaw(InputError):
    pass


class SamplerFailure(CltLabError):
    pass


class TooFewPaths(InputError):
    pass


class TooFewSamples(InputError):
    pass


# rates
class NoLattice(CltLabError):
    pass


class BudgetExceeded(CltLabError):
    pass


class NonPositiveDistance(InputError):
    pass


# front end
class ConfigInvalid(InputError):
    exit_status = 1


class IoFailure(CltLabError):
    pass


class PeriodicityWarning(UserWarning):
    """The chain has eigenvalues other than 1 on the unit circle."""
