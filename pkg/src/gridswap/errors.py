"""Exception types shared across the package."""


class GridswapError(Exception):
    """Base class for all errors raised by gridswap."""


class InputError(GridswapError):
    """Malformed or inconsistent input (bad orders, unknown ids, ...)."""


class DomainError(GridswapError):
    """A quantity left the mathematical domain of an operation."""


class InfeasibleError(GridswapError):
    """A program has no feasible point; the message names the binding constraint."""


class SizeError(GridswapError):
    """An exact enumeration was requested on an instance that is too large."""


class SchemaError(InputError):
    """A scenario config or data file failed validation."""
