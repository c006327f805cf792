"""Exception and warning types raised across the package."""


class LinotError(Exception):
    """Base class for errors raised by linot."""


class DimensionMismatch(LinotError, ValueError):
    pass


class LengthMismatch(LinotError, ValueError):
    pass


class NonPositiveDot(LinotError, ValueError):
    """A ``-log <x, y>`` cost was requested for a pair with ``<x, y> <= 0``."""


class EmptyFeature(LinotError, ValueError):
    pass


class OutOfDomain(LinotError, ValueError):
    pass


class PointOutsideDomain(LinotError, ValueError):
    """A point lies outside the ball on which a feature map is certified."""


class UnsupportedSpec(LinotError, ValueError):
    pass


class InvalidProbability(LinotError, ValueError):
    pass


class KernelUnderflow(LinotError, ValueError):
    """A dense kernel contains entries that underflowed to exactly zero."""


class NumericalBreakdown(LinotError, FloatingPointError):
    pass


class PlanTooLarge(LinotError, MemoryError):
    pass


class LineSearchStall(LinotError, RuntimeError):
    pass


class UnconvergedPotentials(LinotError, ValueError):
    pass


class JacobianUnavailable(LinotError, NotImplementedError):
    pass


class DivergenceSolveError(LinotError, RuntimeError):
    """One of the three solves of a Sinkhorn divergence failed.

    ``which`` is one of ``"xy"``, ``"xx"``, ``"yy"``.
    """

    def __init__(self, which, original):
        super().__init__(f"solve {which!r} failed: {original}")
        self.which = which
        self.original = original


class NotConverged(RuntimeWarning):
    """Emitted when a solver hits ``max_iters``; the report is still returned."""
