"""Exception hierarchy.

The CLI maps ``DataError`` to exit code 2 and ``NumericalError`` to exit code 3.
"""


class KneeSynergyError(Exception):
    pass


class DataError(KneeSynergyError, ValueError):
    """Malformed or out-of-range input data (files, trials, configs)."""


class DegenerateTrialError(DataError):
    """Event detection could not find a well-defined swing phase."""


class NumericalError(KneeSynergyError, ArithmeticError):
    """Rank deficiency, divergence, or other numerical failure."""


class RankDeficientError(NumericalError):
    pass
