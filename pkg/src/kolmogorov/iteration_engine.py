"""Iterated Kolmogorov scheme on shifted Gaussian samples.

Given samples Z of the shifted Gaussian process, the weights obey

    I^0 = 1,
    I^{n+1}_j = dt * sum_{l=1}^{j} < Lambda_{j-l+1} B(l dt, Z_l),
                Q_{j-l+1}^{-1/2} (Z_j - e^{(j-l+1) dt A} Z_l - F_{l,j}) > I^n_l,

with B = B0 - f. The corrections v^n_j = mean_i phi(Z_ij) I^n_ij add up to
the estimate u^n_j = u^{n-1}_j + v^n_j.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from src.kolmogorov.deterministic_path import (
    ShiftProfile,
    convolution_table,
    euler_ode,
    shift_tables,
)
from src.kolmogorov.errors import DivergenceError, PreconditionError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.mc_reference import Estimate
from src.kolmogorov.models import DriftSpec, ModelSpec, ObservableSpec, drift_eval, observable_eval
from src.kolmogorov.parallel import run_chunked
from src.kolmogorov.path_bank import (
    DEFAULT_MAX_BYTES,
    PathBank,
    ShiftedSamples,
    assemble_shifted,
    generate,
)
from src.kolmogorov.seeds import BANK_NAMESPACE, derive_seed
from src.kolmogorov.spectral_linear import (
    KernelTables,
    LinearOperator,
    NoiseSpec,
    build_kernel_tables,
    covariance_spectrum,
    exp_spectrum,
)

if TYPE_CHECKING:
    from src.kolmogorov.telemetry import RunTelemetry

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-2
DEFAULT_MAX_ITER = 10
DEFAULT_DIVERGENCE_THRESHOLD = 1e2


@dataclass(frozen=True, eq=False)
class PreparedProblem:
    """Everything the weight recursion needs, built once per run."""

    model: ModelSpec
    grid: TimeGrid
    x0: np.ndarray
    kernel: KernelTables
    shift: ShiftProfile
    samples: ShiftedSamples
    bank: PathBank

    @property
    def n_samples(self) -> int:
        return self.samples.n_samples

    @property
    def n_coarse(self) -> int:
        return self.grid.n_coarse


def prepare(
    model: ModelSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    bank: PathBank,
    *,
    shift: bool = True,
) -> PreparedProblem:
    """deterministic path -> shift -> convolution table -> shifted samples."""
    x0 = np.asarray(x0, dtype=float)
    bank.check_compatible(grid, model.dimension)
    # exp tables do not depend on sigma; sigma = 0 only disables the weights
    kernel_noise = model.noise if model.noise.sigma > 0 else NoiseSpec(sigma=1.0)
    kernel = build_kernel_tables(model.operator, kernel_noise, grid)
    y = euler_ode(model, grid, x0)
    profile = shift_tables(model, grid, y, enabled=shift)
    profile = profile.with_convolution(convolution_table(profile, kernel, grid))
    assert profile.convolution is not None
    samples = assemble_shifted(bank, x0, profile.convolution, model.noise.sigma, kernel)
    return PreparedProblem(model, grid, x0, kernel, profile, samples, bank)


@dataclass
class IterationState:
    """Weights of the current iteration plus the full series history."""

    n: int
    weights: np.ndarray
    total_weights: np.ndarray
    v: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    err_history: list[float] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    converged: bool = False


@dataclass
class RunReport:
    """Outcome of a run; `err_history[k]` belongs to iteration k + 1."""

    grid: TimeGrid
    seed: int
    n_samples: int
    u: list[np.ndarray]
    err_history: list[float]
    wall_clock: list[float]
    converged: bool
    stop_reason: str
    reference: np.ndarray | None = None
    reference_stderr: np.ndarray | None = None
    absolute_errors: list[float] | None = None
    bank_checksum: str = ""
    samples: ShiftedSamples | None = None
    total_weights: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.err_history)

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]


def _corrections(
    z: np.ndarray,
    b: np.ndarray,
    weights: np.ndarray,
    conv_spec: np.ndarray,
    kernel: KernelTables,
    left_endpoint: bool = False,
) -> np.ndarray:
    """I^{n+1} for one chunk; z, b in the eigenbasis with shape (c, n + 1, d)."""
    n = z.shape[1] - 1
    out = np.zeros(weights.shape)
    decay = kernel.exp_diag
    lagged = np.concatenate([np.ones((1, decay.shape[1])), decay[:-1]])
    coupling = kernel.weight_spectrum()
    for j in range(1, n + 1):
        # l = 1..j maps to kernel index j - l + 1 = j..1, i.e. rows j-1..0
        e = lagged[:j][::-1] if left_endpoint else decay[:j][::-1]
        m = coupling[:j][::-1]
        innovation = z[:, j : j + 1] - e * z[:, 1 : j + 1] - conv_spec[1 : j + 1, j]
        integrand = np.sum(b[:, 1 : j + 1] * m * innovation, axis=-1)
        out[:, j] = kernel.dt * np.sum(integrand * weights[:, 1 : j + 1], axis=-1)
    return out


def weights_next(
    samples: ShiftedSamples,
    drift: DriftSpec,
    shift: ShiftProfile,
    kernel: KernelTables,
    weights: np.ndarray,
    *,
    iteration: int = 0,
    threads: int = 1,
    clip_weights: float | None = None,
    left_endpoint: bool = False,
) -> np.ndarray:
    """One application of the weight recursion.

    Args:
        samples: Shifted Gaussian samples Z
        drift: Drift B0 evaluated on the samples
        shift: Shift profile carrying f and the convolution table F
        kernel: Kernel tables on the coarse grid
        weights: Current weights I^n, shape (n_samples, n + 1)
        iteration: Label of the iteration being computed, used in divergence reports
        threads: Worker threads
        clip_weights: Clip every correction to [-M, M] instead of failing on overflow
        left_endpoint: Use e^{(j-l) dt A} Z_l in the innovation instead of
            e^{(j-l+1) dt A} Z_l; the innovation is then centered given Z_l

    Returns:
        I^{n+1} with the same shape as `weights`

    Raises:
        DivergenceError: A correction is not finite
    """
    if shift.convolution is None:
        raise PreconditionError("shift profile has no convolution table")
    if weights.shape != (samples.n_samples, samples.n_coarse + 1):
        raise PreconditionError(f"weights have shape {weights.shape}")
    A = kernel.operator
    conv_spec = A.to_eigenbasis(shift.convolution)
    f = shift.shift_coarse
    dt = kernel.dt
    out = np.empty_like(weights)

    def work(start: int, stop: int) -> None:
        z = samples.chunk(start, stop)
        b = np.stack(
            [drift_eval(drift, l * dt, z[:, l]) - f[l] for l in range(z.shape[1])], axis=1
        )
        chunk = _corrections(
            A.to_eigenbasis(z),
            A.to_eigenbasis(b),
            weights[start:stop],
            conv_spec,
            kernel,
            left_endpoint,
        )
        if clip_weights is not None:
            np.clip(chunk, -clip_weights, clip_weights, out=chunk)
        bad = np.argwhere(~np.isfinite(chunk))
        if bad.size:
            i, j = (int(v) for v in bad[0])
            raise DivergenceError(
                f"weights diverged at sample {start + i}, index {j}, iteration {iteration}",
                sample=start + i,
                index=j,
                iteration=iteration,
            )
        out[start:stop] = chunk

    run_chunked(samples.n_samples, work, threads)
    return out


def observable_values(samples: ShiftedSamples, observable: ObservableSpec) -> np.ndarray:
    """phi(Z[i, j]), shape (n_samples, n + 1)."""
    observable.check_dimension(samples.dimension)
    return np.stack(
        [observable_eval(observable, samples.at(j)) for j in range(samples.n_coarse + 1)], axis=1
    )


def _average(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # axis-0 reduction runs over samples in ascending order
    return np.sum(phi * weights, axis=0) / phi.shape[0]


def v_series(samples: ShiftedSamples, observable: ObservableSpec, weights: np.ndarray) -> np.ndarray:
    """v^n_j = (1/N_s) sum_i phi(Z[i, j]) I^n[i, j]."""
    return _average(observable_values(samples, observable), weights)


def iterative_error(v: np.ndarray) -> float:
    """err(n) = sup_{j >= 1} |v^n_j|; a single-entry series gives its magnitude."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    tail = v[1:] if v.size > 1 else v
    return float(np.max(np.abs(tail)))


class IterationEngine:
    """Drives the weight recursion over a prepared problem."""

    def __init__(
        self,
        problem: PreparedProblem,
        observable: ObservableSpec,
        *,
        threads: int = 1,
        clip_weights: float | None = None,
    ):
        self.problem = problem
        self.observable = observable
        self._threads = threads
        self._clip = clip_weights
        self._phi = observable_values(problem.samples, observable)

    @property
    def phi(self) -> np.ndarray:
        return self._phi

    def initial_state(self) -> IterationState:
        shape = (self.problem.n_samples, self.problem.n_coarse + 1)
        weights = np.ones(shape)
        v0 = _average(self._phi, weights)
        return IterationState(
            n=0, weights=weights, total_weights=weights.copy(), v=[v0], u=[v0.copy()]
        )

    def step(self, state: IterationState) -> IterationState:
        """Advance `state` by one iteration in place and return it."""
        started = time.perf_counter()
        if self.problem.model.noise.sigma == 0:
            # deterministic samples: no Gaussian innovation to correct with
            nxt = np.zeros_like(state.weights)
        else:
            nxt = weights_next(
                self.problem.samples,
                self.problem.model.drift,
                self.problem.shift,
                self.problem.kernel,
                state.weights,
                iteration=state.n + 1,
                threads=self._threads,
                clip_weights=self._clip,
            )
        v = _average(self._phi, nxt)
        state.n += 1
        state.weights = nxt
        state.total_weights += nxt
        state.v.append(v)
        state.u.append(state.u[-1] + v)
        state.err_history.append(iterative_error(v))
        state.wall_clock.append(time.perf_counter() - started)
        return state

    def reweighted(self, state: IterationState) -> np.ndarray:
        """(1/N_s) sum_i phi(Z[i, j]) sum_{k<=n} I^k[i, j]; equals u^n up to rounding."""
        return _average(self._phi, state.total_weights)


def _absolute_errors(u: list[np.ndarray], reference: np.ndarray) -> list[float]:
    return [float(np.max(np.abs(series - reference))) for series in u]


def blown_up(err_history: list[float], threshold: float | None) -> bool:
    """The last err(n) exceeds `threshold` and did not shrink over the last iteration."""
    if threshold is None or not err_history:
        return False
    last = err_history[-1]
    if not np.isfinite(last):
        return True
    growing = len(err_history) == 1 or last >= err_history[-2]
    return last > threshold and growing


def run(
    model: ModelSpec,
    grid: TimeGrid,
    x0: np.ndarray,
    observable: ObservableSpec,
    n_samples: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    bank: PathBank | None = None,
    shift: bool = True,
    threads: int = 1,
    clip_weights: float | None = None,
    reference_series: tuple[np.ndarray, np.ndarray] | None = None,
    telemetry: "RunTelemetry | None" = None,
    max_bytes: int = DEFAULT_MAX_BYTES,
    divergence_threshold: float | None = DEFAULT_DIVERGENCE_THRESHOLD,
) -> RunReport:
    """Full solve: stop when err(n) < tol or after max_iter corrections.

    `reference_series` is (values, stderr) over the coarse grid; when given,
    the report carries the absolute error of every iterate.

    A run that reaches max_iter with err(n) above `divergence_threshold` and
    still growing is treated as diverged, as is a non-finite weight at any
    iteration. Pass None to only fail on non-finite weights.

    Raises:
        DivergenceError: Weights blew up; `report` holds the completed iterations
    """
    if bank is None:
        bank = generate(
            model.operator,
            grid,
            n_samples,
            derive_seed(seed, BANK_NAMESPACE),
            threads=threads,
            max_bytes=max_bytes,
        )
    elif bank.n_samples != n_samples:
        logger.warning("Bank has %d samples, config asks for %d; using the bank", bank.n_samples, n_samples)

    problem = prepare(model, grid, x0, bank, shift=shift)
    engine = IterationEngine(problem, observable, threads=threads, clip_weights=clip_weights)
    state = engine.initial_state()
    ref = reference_series[0] if reference_series is not None else None
    checksum = bank.checksum()

    def report(reason: str) -> RunReport:
        return RunReport(
            grid=grid,
            seed=seed,
            n_samples=bank.n_samples,
            u=list(state.u),
            err_history=list(state.err_history),
            wall_clock=list(state.wall_clock),
            converged=state.converged,
            stop_reason=reason,
            reference=ref,
            reference_stderr=reference_series[1] if reference_series is not None else None,
            absolute_errors=_absolute_errors(state.u, ref) if ref is not None else None,
            bank_checksum=checksum,
            samples=problem.samples,
            total_weights=state.total_weights.copy(),
        )

    logger.info("u^0(T) = %.6g", state.u[0][-1])
    for _ in range(max_iter):
        try:
            engine.step(state)
        except DivergenceError as e:
            e.report = report("diverged")
            logger.error("Iteration %d diverged: %s", state.n + 1, e)
            raise
        err = state.err_history[-1]
        logger.info("Iteration %d: err=%.3e, u(T)=%.6g", state.n, err, state.u[-1][-1])
        if telemetry is not None:
            telemetry.record_iteration(state.n, err, state.wall_clock[-1])
        if err < tol:
            state.converged = True
            break

    if not state.converged:
        if blown_up(state.err_history, divergence_threshold):
            v = state.v[-1]
            j = int(np.argmax(np.abs(v[1:]))) + 1 if v.size > 1 else 0
            error = DivergenceError(
                f"weights diverged: err({state.n}) = {state.err_history[-1]:.3e} exceeds "
                f"{divergence_threshold:g} after {state.n} iterations (worst index {j})",
                sample=None,
                index=j,
                iteration=state.n,
                report=report("diverged"),
            )
            logger.error("%s", error)
            raise error
        logger.warning("Tolerance %g not reached within %d iterations", tol, max_iter)
    return report("converged" if state.converged else "max_iter")


def moving_mean(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean with shrinking windows at both ends."""
    if window < 1:
        raise PreconditionError("moving-mean window must be at least 1")
    rolled = pd.Series(np.asarray(series, dtype=float)).rolling(window, center=True, min_periods=1)
    return rolled.mean().to_numpy()


def _derivative_inputs(
    A: LinearOperator, noise: NoiseSpec, bank: PathBank, j: int
) -> tuple[float, np.ndarray]:
    if noise.sigma <= 0:
        raise PreconditionError("derivative formula requires sigma > 0")
    if not 1 <= j <= bank.grid.n_coarse:
        raise PreconditionError(f"coarse index {j} outside 1..{bank.grid.n_coarse}")
    if bank.dimension != A.dimension:
        raise PreconditionError("bank and operator dimensions differ")
    return j * bank.grid.dt_coarse, bank.coarse[:, j]


def derivative_estimate(
    A: LinearOperator,
    noise: NoiseSpec,
    bank: PathBank,
    x: np.ndarray,
    h: np.ndarray,
    j: int,
    observable: ObservableSpec,
) -> Estimate:
    """<h, D(S_{0,t} phi)(x)> = E[phi(Z_t^x) <Lambda(t) h, Q_t^{-1/2}(Z_t^x - e^{tA} x)>], t = j dt."""
    t, base = _derivative_inputs(A, noise, bank, j)
    decay = exp_spectrum(A, t)
    inv_sqrt = 1.0 / np.sqrt(covariance_spectrum(A, noise, t))
    mean = A.from_eigenbasis(decay * A.to_eigenbasis(np.asarray(x, dtype=float)))
    z = mean + noise.sigma * base
    lam_h = decay * inv_sqrt * A.to_eigenbasis(np.asarray(h, dtype=float))
    innovation = inv_sqrt * A.to_eigenbasis(noise.sigma * base)
    values = observable_eval(observable, z) * np.sum(lam_h * innovation, axis=-1)
    return Estimate.from_samples(values)


def finite_difference_derivative(
    A: LinearOperator,
    noise: NoiseSpec,
    bank: PathBank,
    x: np.ndarray,
    h: np.ndarray,
    j: int,
    observable: ObservableSpec,
    delta: float = 1e-3,
) -> Estimate:
    """Central difference of S_{0,t} phi along h with common random numbers."""
    t, base = _derivative_inputs(A, noise, bank, j)
    decay = exp_spectrum(A, t)
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)

    def propagated(point: np.ndarray) -> np.ndarray:
        return A.from_eigenbasis(decay * A.to_eigenbasis(point)) + noise.sigma * base

    plus = observable_eval(observable, propagated(x + delta * h))
    minus = observable_eval(observable, propagated(x - delta * h))
    return Estimate.from_samples((plus - minus) / (2.0 * delta))
