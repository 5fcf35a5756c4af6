"""Exact linear-part machinery for the Ornstein-Uhlenbeck semigroup.

Everything here is evaluated in the eigenbasis of A. Since the noise
covariance is sigma^2 * I it commutes with A, so e^{tA}, Q_t, Q_t^{-1/2}
and Lambda(t) = Q_t^{-1/2} e^{tA} are all diagonal in that basis.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat
from scipy import linalg

from src.kolmogorov.errors import PreconditionError
from src.kolmogorov.grid import TimeGrid

logger = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-12


class NoiseSpec(BaseModel):
    """Additive noise sigma * dW, i.e. Q = sigma^2 * Identity."""

    model_config = ConfigDict(frozen=True)

    sigma: NonNegativeFloat = 1.0


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Symmetric, strictly negative definite d x d operator A.

    `eigenvectors` is None for the diagonal representation, in which case
    `eigenvalues` are the diagonal entries in their original order.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    _dense: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.eigenvalues, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise PreconditionError("operator needs at least one eigenvalue")
        if not np.all(np.isfinite(values)) or np.any(values >= 0):
            raise PreconditionError("operator must be strictly negative definite")
        values.setflags(write=False)
        object.__setattr__(self, "eigenvalues", values)

    @classmethod
    def diagonal(cls, entries: np.ndarray | list[float]) -> "LinearOperator":
        return cls(np.array(entries, dtype=float))

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "LinearOperator":
        """Build from a dense matrix; exactly diagonal input keeps the diagonal form."""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise PreconditionError(f"operator must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise PreconditionError("operator has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > _SYMMETRY_TOL * scale:
            raise PreconditionError("operator must be symmetric")
        if np.count_nonzero(m - np.diag(np.diag(m))) == 0:
            return cls.diagonal(np.diag(m).copy())
        try:
            values, vectors = linalg.eigh(m)
        except (linalg.LinAlgError, ValueError) as e:
            raise PreconditionError(f"eigendecomposition of operator failed: {e}") from e
        return cls(values, vectors, m.copy())

    @property
    def dimension(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def is_diagonal(self) -> bool:
        return self.eigenvectors is None

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    def to_dense(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.copy()
        return self.assemble(self.eigenvalues)

    def assemble(self, spectrum: np.ndarray) -> np.ndarray:
        """Matrix with the given eigenvalues in the eigenbasis of A."""
        if self.eigenvectors is None:
            return np.diag(spectrum)
        v = self.eigenvectors
        return (v * spectrum) @ v.T

    def to_eigenbasis(self, x: np.ndarray) -> np.ndarray:
        """Coordinates of row vectors x (..., d) in the eigenbasis."""
        if self.eigenvectors is None:
            return x
        return x @ self.eigenvectors

    def from_eigenbasis(self, c: np.ndarray) -> np.ndarray:
        if self.eigenvectors is None:
            return c
        return c @ self.eigenvectors.T

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A x for row vectors x (..., d)."""
        if self.eigenvectors is None:
            return x * self.eigenvalues
        return self.from_eigenbasis(self.to_eigenbasis(x) * self.eigenvalues)


def _check_time(t: float, *, positive: bool) -> None:
    if not math.isfinite(t):
        raise PreconditionError(f"time must be finite, got {t}")
    if positive and t <= 0:
        raise PreconditionError(f"time must be positive, got {t}")
    if t < 0:
        raise PreconditionError(f"time must be non-negative, got {t}")


def _check_noise(noise: NoiseSpec) -> None:
    if noise.sigma <= 0:
        raise PreconditionError("covariance requires sigma > 0")


def exp_spectrum(A: LinearOperator, t: float) -> np.ndarray:
    return np.exp(t * A.eigenvalues)


def covariance_spectrum(A: LinearOperator, noise: NoiseSpec, t: float) -> np.ndarray:
    """Eigenvalues sigma^2 (1 - e^{-2 lambda t}) / (2 lambda) of Q_t, lambda = -a."""
    a = A.eigenvalues
    return noise.sigma**2 * (-np.expm1(2.0 * t * a)) / (-2.0 * a)


def expm(A: LinearOperator, t: float) -> np.ndarray:
    """e^{tA}."""
    _check_time(t, positive=False)
    return A.assemble(exp_spectrum(A, t))


def covariance(A: LinearOperator, noise: NoiseSpec, t: float) -> np.ndarray:
    """Q_t = int_0^t e^{sA} Q e^{sA} ds."""
    _check_time(t, positive=True)
    _check_noise(noise)
    return A.assemble(covariance_spectrum(A, noise, t))


def lambda_op(A: LinearOperator, noise: NoiseSpec, t: float) -> np.ndarray:
    """Lambda(t) = Q_t^{-1/2} e^{tA}."""
    _check_time(t, positive=True)
    _check_noise(noise)
    return A.assemble(exp_spectrum(A, t) / np.sqrt(covariance_spectrum(A, noise, t)))


@dataclass(frozen=True, eq=False)
class KernelTables:
    """Precomputed kernels at the coarse times j * dt, j = 1..n.

    Spectral arrays have shape (n, d) with row j-1 holding index j. Index 0
    is never stored: Lambda and Q^{-1/2} are singular at t = 0.
    """

    operator: LinearOperator
    noise: NoiseSpec
    dt: float
    exp_diag: np.ndarray
    qt_diag: np.ndarray
    qt_inv_sqrt_diag: np.ndarray
    lambda_diag: np.ndarray

    @property
    def size(self) -> int:
        return int(self.exp_diag.shape[0])

    def _row(self, j: int) -> int:
        if not 1 <= j <= self.size:
            raise IndexError(f"kernel index {j} outside 1..{self.size}")
        return j - 1

    def exp_a(self, j: int) -> np.ndarray:
        return self.operator.assemble(self.exp_diag[self._row(j)])

    def qt(self, j: int) -> np.ndarray:
        return self.operator.assemble(self.qt_diag[self._row(j)])

    def qt_inv_sqrt(self, j: int) -> np.ndarray:
        return self.operator.assemble(self.qt_inv_sqrt_diag[self._row(j)])

    def lambda_(self, j: int) -> np.ndarray:
        if self.operator.is_diagonal:
            return np.diag(self.lambda_diag[self._row(j)])
        return self.qt_inv_sqrt(j) @ self.exp_a(j)

    def exp_spectrum(self, j: int) -> np.ndarray:
        """Eigenvalues of e^{j dt A}; j = 0 gives ones."""
        if j == 0:
            return np.ones(self.operator.dimension)
        return self.exp_diag[self._row(j)]

    def weight_spectrum(self) -> np.ndarray:
        """Eigenvalues of Lambda_j^T Q_j^{-1/2} = e^{j dt A} Q_j^{-1}, shape (n, d)."""
        return self.lambda_diag * self.qt_inv_sqrt_diag


def build_kernel_tables(A: LinearOperator, noise: NoiseSpec, grid: TimeGrid) -> KernelTables:
    """Tabulate e^{tA}, Q_t and Q_t^{-1/2} spectra at every coarse time.

    Args:
        A: Linear part of the drift
        noise: Noise amplitude; must be positive
        grid: Coarse times j * dt_coarse, j = 1..n

    Returns:
        KernelTables shared by the convolution table and the weight update

    Raises:
        PreconditionError: Non-positive noise amplitude
    """
    _check_noise(noise)
    n = grid.n_coarse
    times = grid.dt_coarse * np.arange(1, n + 1)
    exp_diag = np.stack([exp_spectrum(A, float(t)) for t in times])
    qt_diag = np.stack([covariance_spectrum(A, noise, float(t)) for t in times])
    qt_inv_sqrt_diag = 1.0 / np.sqrt(qt_diag)
    lambda_diag = qt_inv_sqrt_diag * exp_diag
    for arr in (exp_diag, qt_diag, qt_inv_sqrt_diag, lambda_diag):
        arr.setflags(write=False)
    logger.info("Built kernel tables: d=%d, %d coarse steps", A.dimension, n)
    return KernelTables(A, noise, grid.dt_coarse, exp_diag, qt_diag, qt_inv_sqrt_diag, lambda_diag)
