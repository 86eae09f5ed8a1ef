"""Exception types shared across the package.

Split out so that every module (and the CLI exit-code mapping) agrees on
what counts as a configuration problem versus a resource problem.
"""


class ConfigError(ValueError):
    """A parameter set or experiment configuration is invalid."""


class ResourceBudgetError(RuntimeError):
    """A requested computation would exceed the configured memory budget.

    Raised eagerly, before allocation, so callers can shrink the request
    instead of dying on an opaque MemoryError.
    """
