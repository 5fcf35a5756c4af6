"""Exception hierarchy and the CLI exit codes they map to."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from src.kolmogorov.iteration_engine import RunReport

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


class KolmogorovError(Exception):
    """Base class for all solver errors."""

    exit_code = EXIT_CONFIG


class ConfigError(KolmogorovError):
    """Invalid experiment configuration; carries every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")


class PreconditionError(KolmogorovError):
    """An operation was called outside its domain (t <= 0, unstable step, ...)."""


class GridMismatchError(KolmogorovError):
    """Inputs built on different time grids or dimensions were combined."""


class DivergenceError(KolmogorovError):
    """A weight or simulated state became non-finite."""

    exit_code = EXIT_DIVERGENCE

    def __init__(
        self,
        message: str,
        *,
        sample: int | None,
        index: int,
        iteration: int | None = None,
        report: RunReport | None = None,
    ):
        self.sample = sample
        self.index = index
        self.iteration = iteration
        self.report = report
        super().__init__(message)


class BankFormatError(KolmogorovError):
    """A path bank file is corrupted, truncated or of an unsupported version."""

    exit_code = EXIT_IO
