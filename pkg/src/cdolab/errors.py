"""Exception taxonomy for cdolab.

Every error raised by the library derives from :class:`CdolabError` so CLI
entry points can map failures onto stable exit codes:

* usage / config problems   -> exit 2
* numeric failures          -> exit 1
* file / format problems    -> exit 3
"""


class CdolabError(Exception):
    """Base class for all cdolab errors."""


class InvalidParameterError(CdolabError, ValueError):
    """A model/market parameter is outside its admissible range."""


class ScheduleError(InvalidParameterError):
    """Tenor and maturity do not form a whole number of periods."""


class DegenerateQuoteError(CdolabError, ArithmeticError):
    """A quote's premium-leg denominator vanished (nothing to accrue on)."""


class NoSolutionError(CdolabError, ValueError):
    """Root bracketing failed: the target value is not attainable.

    Carries the attainable interval so callers can report it.
    """

    def __init__(self, message, lo=None, hi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi


class NumericError(CdolabError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class FormatError(CdolabError, OSError):
    """A binary artifact (weight file, dataset) is malformed."""


class ConfigError(CdolabError, ValueError):
    """A run configuration file failed schema validation."""
