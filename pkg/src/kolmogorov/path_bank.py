"""Base Gaussian trajectories: generation, persistence and shifted views.

A bank holds N_s Euler paths of dZ = A Z dt + dW started at zero, kept only
at coarse times. The same bank serves every (x0, sigma, drift) combination
on its grid and spectrum.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src.kolmogorov.deterministic_path import check_stability
from src.kolmogorov.errors import BankFormatError, GridMismatchError, PreconditionError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.parallel import run_chunked
from src.kolmogorov.seeds import BANK_NAMESPACE, draw_block, sample_generators
from src.kolmogorov.spectral_linear import KernelTables, LinearOperator

logger = logging.getLogger(__name__)

MAGIC = b"KIPB"
VERSION = 1
DEFAULT_MAX_BYTES = 4 * 1024**3

# 64-byte little-endian header followed by sample-major float64 payload
HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("d", "<u8"),
        ("n_samples", "<u8"),
        ("n_steps", "<u8"),
        ("dt_fine", "<f8"),
        ("dt_coarse", "<f8"),
        ("T", "<f8"),
        ("seed", "<u8"),
    ]
)


def operator_checksum(A: LinearOperator) -> str:
    """SHA-256 of the spectrum (and eigenbasis, when not diagonal) of A."""
    digest = hashlib.sha256(np.ascontiguousarray(A.eigenvalues, dtype="<f8").tobytes())
    if A.eigenvectors is not None:
        digest.update(np.ascontiguousarray(A.eigenvectors, dtype="<f8").tobytes())
    return digest.hexdigest()


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


@dataclass(frozen=True, eq=False)
class PathBank:
    """coarse has shape (n_samples, n_coarse + 1, d); coarse[:, 0] == 0.

    `operator_checksum` identifies the spectrum the paths were drawn from; it
    is None for a loaded bank whose sidecar is missing.
    """

    seed: int
    grid: TimeGrid
    coarse: np.ndarray
    operator_checksum: str | None = None

    @property
    def n_samples(self) -> int:
        return int(self.coarse.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.coarse.shape[2])

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.coarse, dtype="<f8").tobytes()).hexdigest()

    def check_compatible(self, grid: TimeGrid, d: int) -> None:
        if self.grid != grid:
            raise GridMismatchError(f"bank grid {self.grid} does not match {grid}")
        if self.dimension != d:
            raise GridMismatchError(f"bank dimension {self.dimension} does not match d={d}")

    def check_operator(self, A: LinearOperator) -> None:
        if self.operator_checksum is None:
            logger.warning("Bank carries no operator checksum; spectrum not verified")
            return
        if self.operator_checksum != operator_checksum(A):
            raise GridMismatchError(
                f"bank was drawn for spectrum {self.operator_checksum[:16]}, "
                f"model has {operator_checksum(A)[:16]}"
            )


def estimate_bytes(grid: TimeGrid, d: int, n_samples: int) -> int:
    return n_samples * (grid.n_coarse + 1) * d * 8


def generate(
    A: LinearOperator,
    grid: TimeGrid,
    n_samples: int,
    seed: int,
    *,
    threads: int = 1,
    max_bytes: int = DEFAULT_MAX_BYTES,
) -> PathBank:
    """Simulate base paths Z_j = Z_{j-1} + dt A Z_{j-1} + sqrt(dt) xi_j.

    Args:
        A: Linear part of the drift
        grid: Mixed-step grid; paths are kept every `grid.stride` fine steps
        n_samples: Number of paths
        seed: Bank seed; sample i draws from its own stream
        threads: Worker threads, does not change the result
        max_bytes: Refuse banks whose payload would exceed this size

    Returns:
        A read-only PathBank tagged with the checksum of A

    Raises:
        PreconditionError: Empty or oversized bank, or unstable fine step
    """
    if n_samples < 1:
        raise PreconditionError("bank needs at least one sample")
    d = A.dimension
    needed = estimate_bytes(grid, d, n_samples)
    if needed > max_bytes:
        raise PreconditionError(
            f"bank of {n_samples} x {grid.n_coarse + 1} x {d} needs {needed} bytes, "
            f"cap is {max_bytes}"
        )
    check_stability(A, grid.dt_fine)

    dt = grid.dt_fine
    sqrt_dt = np.sqrt(dt)
    coarse = np.zeros((n_samples, grid.n_coarse + 1, d))

    def work(start: int, stop: int) -> None:
        gens = sample_generators(seed, BANK_NAMESPACE, start, stop)
        z = np.zeros((stop - start, d))
        for j in range(1, grid.n_coarse + 1):
            xi = draw_block(gens, grid.stride, d)
            for s in range(grid.stride):
                z = z + dt * A.apply(z) + sqrt_dt * xi[:, s]
            coarse[start:stop, j] = z

    run_chunked(n_samples, work, threads)
    coarse.setflags(write=False)
    bank = PathBank(seed, grid, coarse, operator_checksum(A))
    logger.info(
        "Generated path bank: N_s=%d, d=%d, steps=%d, checksum=%s",
        n_samples,
        d,
        grid.n_coarse,
        bank.checksum()[:16],
    )
    return bank


@dataclass(frozen=True, eq=False)
class ShiftedSamples:
    """Lazy view Z[i, j] = e^{j dt A} x0 + F[0, j] + sigma * base[i, j]."""

    grid: TimeGrid
    base: np.ndarray
    mean: np.ndarray
    sigma: float

    @property
    def n_samples(self) -> int:
        return int(self.base.shape[0])

    @property
    def n_coarse(self) -> int:
        return int(self.base.shape[1]) - 1

    @property
    def dimension(self) -> int:
        return int(self.base.shape[2])

    def at(self, j: int) -> np.ndarray:
        """All samples at coarse index j, shape (n_samples, d)."""
        return self.mean[j] + self.sigma * self.base[:, j]

    def chunk(self, start: int, stop: int) -> np.ndarray:
        """Samples start..stop-1 at every coarse index, shape (stop - start, n + 1, d)."""
        return self.mean + self.sigma * self.base[start:stop]

    def materialize(self) -> np.ndarray:
        return self.chunk(0, self.n_samples)


def assemble_shifted(
    bank: PathBank,
    x0: np.ndarray,
    convolution: np.ndarray,
    sigma: float,
    kernel: KernelTables,
) -> ShiftedSamples:
    x0 = np.asarray(x0, dtype=float)
    n = bank.grid.n_coarse
    d = bank.dimension
    if kernel.size != n or convolution.shape[:2] != (n + 1, n + 1):
        raise GridMismatchError("bank, kernel tables and convolution table disagree on step count")
    if x0.shape != (d,) or convolution.shape[2] != d or kernel.operator.dimension != d:
        raise GridMismatchError(f"dimension mismatch: bank d={d}, x0 shape {x0.shape}")

    A = kernel.operator
    x0_spec = A.to_eigenbasis(x0)
    decay = np.stack([kernel.exp_spectrum(j) for j in range(n + 1)])
    mean = A.from_eigenbasis(decay * x0_spec) + convolution[0]
    mean[0] = x0
    mean.setflags(write=False)
    return ShiftedSamples(bank.grid, bank.coarse, mean, float(sigma))


def save(bank: PathBank, path: str | Path) -> None:
    """Write the 64-byte header and the sample-major payload.

    The operator checksum is not part of the binary format; callers record it
    in the `<path>.json` sidecar.

    Args:
        bank: Bank to persist
        path: Destination file, overwritten if present
    """
    header = np.zeros((), dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["d"] = bank.dimension
    header["n_samples"] = bank.n_samples
    header["n_steps"] = bank.grid.n_coarse
    header["dt_fine"] = bank.grid.dt_fine
    header["dt_coarse"] = bank.grid.dt_coarse
    header["T"] = bank.grid.T
    header["seed"] = bank.seed
    with Path(path).open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(bank.coarse, dtype="<f8").tobytes())
    logger.info("Saved path bank to %s", path)


def read_header(path: str | Path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        raw = fh.read(HEADER_DTYPE.itemsize)
    if len(raw) < HEADER_DTYPE.itemsize:
        raise BankFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    header = np.frombuffer(raw, dtype=HEADER_DTYPE)[0]
    if bytes(header["magic"]) != MAGIC:
        raise BankFormatError(f"{path}: bad magic {bytes(header['magic'])!r}, not a path bank")
    if int(header["version"]) != VERSION:
        raise BankFormatError(
            f"{path}: unsupported version {int(header['version'])} (expected {VERSION})"
        )
    return header


def read_operator_checksum(path: str | Path) -> str | None:
    """Operator checksum from the bank's sidecar, None if there is no sidecar."""
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        return None
    try:
        recorded = json.loads(sidecar.read_text(encoding="utf-8")).get("operator_checksum")
    except (json.JSONDecodeError, AttributeError) as e:
        raise BankFormatError(f"{sidecar}: unreadable bank sidecar: {e}") from e
    if recorded is not None and not isinstance(recorded, str):
        raise BankFormatError(f"{sidecar}: operator_checksum must be a string")
    return recorded


def load(path: str | Path) -> PathBank:
    """Read a bank written by `save`, validating header and payload size.

    Args:
        path: Bank file; a `<path>.json` sidecar, when present, supplies the
            operator checksum

    Returns:
        A read-only PathBank

    Raises:
        BankFormatError: Bad magic or version, truncated file, inconsistent
            header or unreadable sidecar
    """
    path = Path(path)
    header = read_header(path)
    d, n_samples, n_steps = (int(header[k]) for k in ("d", "n_samples", "n_steps"))
    if min(d, n_samples, n_steps) < 1:
        raise BankFormatError(f"{path}: empty dimensions in header")
    payload_bytes = n_samples * (n_steps + 1) * d * 8
    actual = path.stat().st_size - HEADER_DTYPE.itemsize
    if payload_bytes > np.iinfo(np.int64).max or payload_bytes != actual:
        raise BankFormatError(
            f"{path}: payload is {actual} bytes, header implies {payload_bytes} "
            "(truncated file or dimension overflow)"
        )
    try:
        grid = TimeGrid(
            T=float(header["T"]),
            dt_fine=float(header["dt_fine"]),
            dt_coarse=float(header["dt_coarse"]),
        )
    except ValidationError as e:
        raise BankFormatError(f"{path}: invalid grid in header: {e}") from e
    if grid.n_coarse != n_steps:
        raise BankFormatError(f"{path}: header step count {n_steps} disagrees with grid")

    with path.open("rb") as fh:
        fh.seek(HEADER_DTYPE.itemsize)
        data = np.frombuffer(fh.read(), dtype="<f8")
    coarse = data.astype(np.float64).reshape(n_samples, n_steps + 1, d)
    coarse.setflags(write=False)
    logger.info("Loaded path bank %s: N_s=%d, d=%d, steps=%d", path, n_samples, d, n_steps)
    return PathBank(int(header["seed"]), grid, coarse, read_operator_checksum(path))
