"""Exception hierarchy shared by all krillwalk modules."""


class KrillwalkError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class LawError(KrillwalkError, ValueError):
    """Malformed or inconsistent step / offspring law."""

    exit_code = 3


class SpecSyntaxError(LawError):
    """A law specification string that cannot be parsed at all."""

    exit_code = 2


class NotWellControlled(KrillwalkError, ValueError):
    exit_code = 3


class NoBracket(KrillwalkError, RuntimeError):
    pass


class LatticeSpanError(KrillwalkError, ValueError):
    exit_code = 3


class StateCapExceeded(KrillwalkError, RuntimeError):
    pass


class TooLargeForOracle(KrillwalkError, ValueError):
    exit_code = 3


class RangeError(KrillwalkError, ValueError):
    exit_code = 3


class BudgetExceeded(KrillwalkError, RuntimeError):
    pass


class SupercriticalDivergence(KrillwalkError, ValueError):
    exit_code = 3


class ThresholdBeyondCensoring(KrillwalkError, ValueError):
    exit_code = 3


class PowerError(KrillwalkError, ValueError):
    exit_code = 3
