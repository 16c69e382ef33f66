"""Exception hierarchy.

Each family maps to a CLI exit code (see :mod:`cityrec.cli`).
"""


class CityRecError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidInputError(CityRecError, ValueError):
    """A value violates a type invariant (non-finite coordinate, bad offset...)."""

    exit_code = 3


class DegenerateMidpointError(InvalidInputError):
    """Points cancel out on the sphere; no meaningful midpoint exists."""


class ConfigError(CityRecError, ValueError):
    exit_code = 2


class DataError(CityRecError):
    """Input data is inconsistent (e.g. a venue without a city)."""

    exit_code = 3


class NumericalError(CityRecError, ArithmeticError):
    exit_code = 4
