"""Euler-Maruyama Monte Carlo reference for E[phi(X_t)]."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.kolmogorov.deterministic_path import check_stability
from src.kolmogorov.errors import DivergenceError, GridMismatchError, PreconditionError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.models import ModelSpec, ObservableSpec, drift_eval, observable_eval
from src.kolmogorov.parallel import run_chunked
from src.kolmogorov.seeds import REFERENCE_NAMESPACE, draw_block, sample_generators
from src.kolmogorov.spectral_linear import LinearOperator, NoiseSpec, covariance_spectrum

logger = logging.getLogger(__name__)

DEFAULT_REFERENCE_SAMPLES = 20_000
DEFAULT_REFERENCE_DT = 1e-3


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error."""

    value: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "Estimate":
        values = np.asarray(values, dtype=float)
        n = int(values.size)
        if n == 0:
            raise PreconditionError("cannot estimate from zero samples")
        mean = float(np.sum(values) / n)
        if n == 1 or np.ptp(values) == 0:
            return cls(mean, 0.0, n)
        return cls(mean, float(np.std(values, ddof=1) / np.sqrt(n)), n)

    def within(self, target: float, sigmas: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.value - target) <= max(sigmas * self.stderr, floor)


@dataclass(frozen=True, eq=False)
class ReferenceSeries:
    """Per-coarse-index reference estimates, shape (n + 1,)."""

    grid: TimeGrid
    values: np.ndarray
    stderr: np.ndarray
    n_samples: int

    def __getitem__(self, j: int) -> Estimate:
        return Estimate(float(self.values[j]), float(self.stderr[j]), self.n_samples)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "j": np.arange(self.values.size),
                "t": self.grid.dt_coarse * np.arange(self.values.size),
                "ref": self.values,
                "ref_stderr": self.stderr,
            }
        )


Recorder = Callable[[int, int, int, np.ndarray], None]


def _simulate(
    model: ModelSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    n_samples: int,
    seed: int,
    record: Recorder,
    threads: int,
) -> None:
    """X_j = X_{j-1} + dt (A X_{j-1} + B0) + sigma sqrt(dt) xi_j; `record(start, stop, j, X)`
    is called at every coarse index j."""
    x0 = np.asarray(x0, dtype=float)
    d = model.dimension
    if x0.shape != (d,):
        raise GridMismatchError(f"x0 has shape {x0.shape}, expected ({d},)")
    if n_samples < 1:
        raise PreconditionError("reference needs at least one sample")
    check_stability(model.operator, grid.dt_fine)
    dt = grid.dt_fine
    noise_scale = model.noise.sigma * np.sqrt(dt)

    def work(start: int, stop: int) -> None:
        gens = sample_generators(seed, REFERENCE_NAMESPACE, start, stop)
        x = np.tile(x0, (stop - start, 1))
        record(start, stop, 0, x)
        step = 0
        for j in range(1, grid.n_coarse + 1):
            xi = draw_block(gens, grid.stride, d)
            for s in range(grid.stride):
                x = (
                    x
                    + dt * (model.operator.apply(x) + drift_eval(model.drift, step * dt, x))
                    + noise_scale * xi[:, s]
                )
                step += 1
                bad = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
                if bad.size:
                    raise DivergenceError(
                        f"reference path of sample {start + int(bad[0])} blew up at fine step {step}",
                        sample=start + int(bad[0]),
                        index=step,
                    )
            record(start, stop, j, x)

    run_chunked(n_samples, work, threads)


def euler_maruyama_run(
    model: ModelSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    n_samples: int,
    seed: int,
    observable: ObservableSpec,
    *,
    threads: int = 1,
) -> ReferenceSeries:
    """Euler-Maruyama estimate of E[phi(X_t)] at every coarse time.

    Args:
        model: Operator, noise and nonlinear drift
        grid: Paths step with dt_fine and are recorded every coarse step
        x0: Initial state, shape (d,)
        n_samples: Number of independent paths
        seed: Reference seed; sample i draws from its own stream
        observable: phi
        threads: Worker threads, does not change the result

    Returns:
        Mean and standard error per coarse index

    Raises:
        DivergenceError: A path became non-finite
    """
    observable.check_dimension(model.dimension)
    phi = np.empty((n_samples, grid.n_coarse + 1))

    def record(start: int, stop: int, j: int, x: np.ndarray) -> None:
        phi[start:stop, j] = observable_eval(observable, x)

    _simulate(model, grid, x0, n_samples, seed, record, threads)
    estimates = [Estimate.from_samples(phi[:, j]) for j in range(grid.n_coarse + 1)]
    series = ReferenceSeries(
        grid,
        np.array([e.value for e in estimates]),
        np.array([e.stderr for e in estimates]),
        n_samples,
    )
    logger.info(
        "Reference: N_s=%d, dt=%g, ref(T)=%.6g +- %.2g",
        n_samples,
        grid.dt_fine,
        series.values[-1],
        series.stderr[-1],
    )
    return series


def simulate_states(
    model: ModelSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    n_samples: int,
    seed: int,
    index: int,
    *,
    threads: int = 1,
) -> np.ndarray:
    """Nonlinear-process samples at one coarse index.

    Uses the same streams as `euler_maruyama_run`, so equal seeds give the
    states behind the reference series.

    Args:
        model: Operator, noise and nonlinear drift
        grid: Simulation grid
        x0: Initial state, shape (d,)
        n_samples: Number of paths
        seed: Reference seed
        index: Coarse index to keep
        threads: Worker threads

    Returns:
        States of shape (n_samples, d)
    """
    if not 0 <= index <= grid.n_coarse:
        raise PreconditionError(f"coarse index {index} outside 0..{grid.n_coarse}")
    states = np.empty((n_samples, model.dimension))

    def record(start: int, stop: int, j: int, x: np.ndarray) -> None:
        if j == index:
            states[start:stop] = x

    _simulate(model, grid, x0, n_samples, seed, record, threads)
    return states


def compare(series_u: Sequence[np.ndarray], series_ref: np.ndarray) -> pd.DataFrame:
    """Absolute error of every iterate: sup over the grid and at the final time."""
    ref = np.asarray(series_ref, dtype=float)
    rows = []
    for n, u in enumerate(series_u):
        u = np.asarray(u, dtype=float)
        if u.shape != ref.shape:
            raise GridMismatchError(f"iterate {n} has {u.size} points, reference has {ref.size}")
        diff = np.abs(u - ref)
        rows.append({"n": n, "sup_abs_error": float(np.max(diff)), "final_abs_error": float(diff[-1])})
    table = pd.DataFrame(rows, columns=["n", "sup_abs_error", "final_abs_error"])
    with np.errstate(divide="ignore"):
        table["log10_sup_abs_error"] = np.log10(table["sup_abs_error"].to_numpy(dtype=float))
        table["log10_final_abs_error"] = np.log10(table["final_abs_error"].to_numpy(dtype=float))
    return table


def ou_moments(
    A: LinearOperator, noise: NoiseSpec, x0: np.ndarray, t: float, epsilon: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of dX = (A + epsilon I) X dt + sigma dW at time t.

    Requires A + epsilon I to stay negative definite.
    """
    shifted = LinearOperator(A.eigenvalues + epsilon, A.eigenvectors)
    decay = np.exp(t * shifted.eigenvalues)
    mean = shifted.from_eigenbasis(decay * shifted.to_eigenbasis(np.asarray(x0, dtype=float)))
    return mean, shifted.assemble(covariance_spectrum(shifted, noise, t))


def analytic_linear_mean(
    A: LinearOperator, x0: np.ndarray, t: float, epsilon: float = 0.0
) -> np.ndarray:
    """e^{t (A + epsilon I)} x0, the mean of the linear-drift model at time t."""
    decay = np.exp(t * (A.eigenvalues + epsilon))
    return A.from_eigenbasis(decay * A.to_eigenbasis(np.asarray(x0, dtype=float)))
