"""Exact and Monte Carlo tools for directed polymers in tube environments."""

__version__ = "0.1.0"

from . import (  # noqa: E402
    chaos,
    environment,
    harness,
    intersection,
    limit_laws,
    partition,
    rng,
    walk_kernel,
)
from .errors import ConfigError, ResourceBudgetError  # noqa: E402
