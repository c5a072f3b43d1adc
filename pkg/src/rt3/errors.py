"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to its
documented status codes without a lookup table.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGENCE = 4


class Rt3Error(Exception):
    exit_code = EXIT_CONFIG


class ConfigError(Rt3Error):
    """Bad or missing configuration / input file."""


class NonDivisible(Rt3Error):
    """Block division does not evenly divide the matrix."""


class DimensionMismatch(Rt3Error):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotBlockRegular(Rt3Error):
    """Mask keeps partial rows/columns inside some block."""


class InvalidConfig(Rt3Error):
    pass


class TooSmall(Rt3Error):
    pass


class PatternSpaceError(Rt3Error):
    pass


class InvalidSchedule(Rt3Error):
    pass


class DegenerateRange(Rt3Error):
    """A_o equals A_m, so accuracy cannot be normalized."""


class Infeasible(Rt3Error):
    exit_code = EXIT_INFEASIBLE


class NoFeasible(Infeasible):
    """Every explored configuration violated the timing constraint."""


class DivergenceDetected(Rt3Error):
    exit_code = EXIT_DIVERGENCE


class Exhausted(Rt3Error):
    """Battery cannot pay for the next inference."""
