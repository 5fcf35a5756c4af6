"""Shared test utilities."""

from pathlib import Path

import numpy as np

from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.models import DriftKind, DriftSpec, ModelSpec, SpectrumKind, build_spectrum
from src.kolmogorov.spectral_linear import LinearOperator, NoiseSpec


def small_grid(T: float = 0.1, dt_fine: float = 1e-3, dt_coarse: float = 1e-2) -> TimeGrid:
    """A short mixed-step grid that keeps Monte Carlo tests fast."""
    return TimeGrid(T=T, dt_fine=dt_fine, dt_coarse=dt_coarse)


def make_model(
    kind: DriftKind,
    d: int,
    *,
    sigma: float = 1.0,
    operator: LinearOperator | None = None,
    **params: object,
) -> ModelSpec:
    """Model on the Laplacian spectrum unless an operator is given.

    Args:
        kind: Drift kind
        d: Dimension
        sigma: Noise amplitude
        operator: Optional linear part replacing the Laplacian spectrum
        **params: Extra DriftSpec fields

    Returns:
        The assembled ModelSpec
    """
    A = operator if operator is not None else build_spectrum(SpectrumKind.LAPLACIAN, d)
    drift = DriftSpec.model_validate({"kind": kind, "dimension": d, **params})
    return ModelSpec(A, NoiseSpec(sigma=sigma), drift)


def random_rotation(d: int, seed: int = 7) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def write_config(directory: Path, body: str, name: str = "exp.cfg") -> Path:
    """Write an experiment file whose outputs land in `directory`/out."""
    path = directory / name
    path.write_text(body + f"\noutput.dir = {directory / 'out'}\n", encoding="utf-8")
    return path
