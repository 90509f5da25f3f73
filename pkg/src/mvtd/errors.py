"""Exception hierarchy.

Every error carries the CLI exit code it maps to:
2 for configuration/input problems, 3 when a mathematical regime required by
the bounds is violated.  Exit code 4 (failed verification) is not an
exception; the ``verify`` command returns it directly.
"""

from __future__ import annotations


class MvtdError(Exception):
    exit_code = 1


class ConfigError(MvtdError):
    exit_code = 2


class RegimeError(MvtdError):
    exit_code = 3


# --- input validation -------------------------------------------------------
class NonStochasticRow(ConfigError):
    pass


class NegativeProbability(ConfigError):
    pass


class GammaOutOfRange(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class FileParseError(ConfigError):
    pass


class ParseError(ConfigError):
    pass


class ConstraintViolation(ConfigError):
    pass


class MissingProjectionRadius(ConfigError):
    pass


class InvalidMixingConstants(ConfigError):
    pass


# --- mathematical regime ----------------------------------------------------
class NotIrreducible(RegimeError):
    pass


class RankDeficient(RegimeError):
    pass


class SingularSystem(RegimeError):
    pass


class NotPositive(RegimeError):
    pass


class StepSizeTooLarge(RegimeError):
    pass


class CriticDiverged(RegimeError):
    pass
