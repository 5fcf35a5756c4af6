"""Deterministic counterpart of the SDE: Euler path, shift tables and the
rectangle-rule convolution table F."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from src.kolmogorov.errors import DivergenceError, GridMismatchError, PreconditionError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.models import ModelSpec, drift_eval
from src.kolmogorov.spectral_linear import KernelTables, LinearOperator

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 2.0


@dataclass(frozen=True, eq=False)
class ShiftProfile:
    """Deterministic path y, shift f on both grids and (optionally) F.

    Shapes: path and shift_fine (n_fine + 1, d); shift_coarse (n + 1, d);
    convolution (n + 1, n + 1, d) with F[j, k] = 0 for k <= j.
    """

    grid: TimeGrid
    path: np.ndarray
    shift_fine: np.ndarray
    shift_coarse: np.ndarray
    convolution: np.ndarray | None = None
    enabled: bool = True

    @property
    def dimension(self) -> int:
        return int(self.path.shape[1])

    def with_convolution(self, table: np.ndarray) -> "ShiftProfile":
        return replace(self, convolution=table)


def check_stability(A: LinearOperator, dt: float) -> None:
    """Explicit Euler on A needs dt * max|a_k| < 2."""
    if dt * A.spectral_radius >= STABILITY_LIMIT:
        raise PreconditionError(
            f"explicit Euler unstable: dt={dt} * max|a_k|={A.spectral_radius:g} >= "
            f"{STABILITY_LIMIT}; reduce grid.dt_fine"
        )


def euler_ode(model: ModelSpec, grid: TimeGrid, x0: np.ndarray) -> np.ndarray:
    """y_j = y_{j-1} + dt (A y_{j-1} + B0((j-1) dt, y_{j-1})), y_0 = x0."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dimension,):
        raise GridMismatchError(f"x0 has shape {x0.shape}, expected ({model.dimension},)")
    dt = grid.dt_fine
    check_stability(model.operator, dt)

    y = np.empty((grid.n_fine + 1, model.dimension))
    y[0] = x0
    for j in range(1, grid.n_fine + 1):
        prev = y[j - 1]
        y[j] = prev + dt * (model.operator.apply(prev) + drift_eval(model.drift, (j - 1) * dt, prev))
        if not np.all(np.isfinite(y[j])):
            raise DivergenceError(
                f"deterministic path blew up at fine index {j}", sample=None, index=j
            )
    return y


def shift_tables(
    model: ModelSpec, grid: TimeGrid, y: np.ndarray, *, enabled: bool = True
) -> ShiftProfile:
    """f_j = B0(j dt, y_j) on the fine grid and its coarse subsample.

    With `enabled=False` the shift is identically zero (plain Gaussian
    approximation) while the path is kept for reporting.
    """
    if y.shape != (grid.n_fine + 1, model.dimension):
        raise GridMismatchError(
            f"path shape {y.shape} does not match grid ({grid.n_fine + 1}, {model.dimension})"
        )
    if enabled:
        f_fine = np.stack(
            [drift_eval(model.drift, j * grid.dt_fine, y[j]) for j in range(grid.n_fine + 1)]
        )
    else:
        f_fine = np.zeros_like(y)
    f_coarse = f_fine[:: grid.stride].copy()
    return ShiftProfile(grid, y, f_fine, f_coarse, enabled=enabled)


def convolution_table(shift: ShiftProfile, kernel: KernelTables, grid: TimeGrid) -> np.ndarray:
    """F[j, k] = dt sum_{l=j}^{k-1} e^{dt (k-l) A} f_l for k > j, else 0."""
    n = grid.n_coarse
    if shift.shift_coarse.shape[0] != n + 1 or kernel.size != n:
        raise GridMismatchError("shift profile, kernel tables and grid disagree on step count")
    A = kernel.operator
    f = A.to_eigenbasis(shift.shift_coarse)
    table = np.zeros((n + 1, n + 1, shift.dimension))
    for k in range(1, n + 1):
        # row l holds e^{dt (k-l) A} f_l for l = 0..k-1
        terms = kernel.exp_diag[:k][::-1] * f[:k]
        tail_sums = np.cumsum(terms[::-1], axis=0)[::-1]
        table[:k, k] = kernel.dt * tail_sums
    if not A.is_diagonal:
        table = A.from_eigenbasis(table)
    logger.info("Built convolution table: %d x %d x %d", n + 1, n + 1, shift.dimension)
    return table
