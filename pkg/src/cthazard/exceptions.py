"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``InputError`` (and subclasses) exit
with 1, ``NumericalError`` (and subclasses) with 2.
"""


class InputError(ValueError):
    """Malformed or inconsistent user input (files, configs, arguments)."""


class ShapeError(InputError):
    """Array dimensions inconsistent with the operation being built."""


class GraphStateError(RuntimeError):
    """A graph operation was invoked out of order (e.g. backward before forward)."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or otherwise unusable values."""


class MetricUndefinedError(NumericalError):
    """A metric has no defined value on the given data (e.g. no comparable pairs)."""
