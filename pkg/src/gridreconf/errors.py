"""Exception types raised across the package."""


class GridReconfError(Exception):
    """Base class for all package errors."""


class InvalidGrid(GridReconfError):
    pass


class InfeasibleRadiality(GridReconfError):
    pass


class DegenerateVoltage(GridReconfError):
    pass


class DimensionMismatch(GridReconfError):
    pass


class UnknownLayout(GridReconfError):
    pass


class TooManyTopologies(GridReconfError):
    pass


class Infeasible(GridReconfError):
    pass


class AllInfeasible(Infeasible):
    pass


class MaxIter(GridReconfError):
    pass


class BadCutoff(GridReconfError):
    pass


class BadBounds(GridReconfError):
    pass


class BatchTooSmall(GridReconfError):
    pass


class NonFiniteGradient(GridReconfError):
    pass


class MissingLabels(GridReconfError):
    pass


class ConfigError(GridReconfError):
    pass
