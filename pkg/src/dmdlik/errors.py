"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`DmdlikError`,
so callers (and the CLI's exit-code mapping) can catch by family.
"""


class DmdlikError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(DmdlikError, ValueError):
    pass


class ModelError(DmdlikError, ValueError):
    """A model violates a construction invariant (e.g. nonstationary A)."""


class NumericalError(DmdlikError, ArithmeticError):
    """Family of numerical failures (exit code 3 in the CLI)."""


class NonConvergence(NumericalError):
    pass


class NumericalSingularity(NumericalError):
    pass


class SingularOmega(NumericalSingularity):
    pass


class SingularSpectrum(NumericalSingularity):
    pass


class ZeroDenominator(NumericalError):
    pass


class PanelTooShort(DmdlikError, ValueError):
    pass


class RankTooLarge(DmdlikError, ValueError):
    pass


class EmptyResiduals(DmdlikError, ValueError):
    pass


class InconsistentHorizon(DimensionMismatch):
    pass


class InitInvalid(DmdlikError, ValueError):
    pass


class ConfigError(DmdlikError, ValueError):
    """Bad or unknown configuration keys; ``line`` is set when known."""

    def __init__(self, message, *, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DataFormatError(DmdlikError, ValueError):
    """Malformed data file; carries the offending row/column (1-based)."""

    def __init__(self, message, *, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        prefix = f"{path}: " if path is not None else ""
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(prefix + message + suffix)
