"""CSV tables and JSON metadata sidecars written by the command line.

Floats are written with 17 significant digits and `\\n` line endings so that
identical runs produce identical bytes.
"""

import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.kolmogorov.errors import GridMismatchError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.iteration_engine import RunReport
from src.kolmogorov.mc_reference import ReferenceSeries

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class RunMetadata(BaseModel):
    """Sidecar naming everything needed to reproduce an output file."""

    model_config = ConfigDict(frozen=True)

    command: str
    config_hash: str
    config_text: str
    seed: int
    bank_seed: int | None = None
    reference_seed: int | None = None
    grid: dict[str, float]
    model: dict[str, Any]
    tol: float | None = None
    max_iter: int | None = None
    iterations: int | None = None
    converged: bool | None = None
    stop_reason: str | None = None
    err_history: list[float] = Field(default_factory=list)
    bank_checksum: str | None = None
    operator_checksum: str | None = None
    outputs: list[str] = Field(default_factory=list)
    extra: dict[str, Any] = Field(default_factory=dict)
    wall_clock_seconds: list[float] = Field(default_factory=list)


def grid_dict(grid: TimeGrid) -> dict[str, float]:
    return {"T": grid.T, "dt_fine": grid.dt_fine, "dt_coarse": grid.dt_coarse}


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_metadata(metadata: RunMetadata, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metadata.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote metadata %s", path)
    return path


def u_series_frame(report: RunReport, movmean: np.ndarray | None = None) -> pd.DataFrame:
    """Columns j, t, u0..uN, then ref, ref_stderr and u_movmean when available."""
    n_points = report.u[0].size
    columns: dict[str, np.ndarray] = {
        "j": np.arange(n_points),
        "t": report.grid.dt_coarse * np.arange(n_points),
    }
    for n, series in enumerate(report.u):
        columns[f"u{n}"] = series
    if report.reference is not None:
        columns["ref"] = report.reference
    if report.reference_stderr is not None:
        columns["ref_stderr"] = report.reference_stderr
    if movmean is not None:
        columns["u_movmean"] = movmean
    return pd.DataFrame(columns)


def err_history_frame(report: RunReport) -> pd.DataFrame:
    """One row per correction n >= 1; abs_err is sup_j |u^n_j - ref_j|.

    Wall-clock times are written to the sidecar only.
    """
    frame = pd.DataFrame(
        {"n": np.arange(1, report.iterations + 1), "err": report.err_history}
    )
    if report.absolute_errors is not None:
        frame["abs_err"] = report.absolute_errors[1 : report.iterations + 1]
    return frame


def reference_frame(series: ReferenceSeries) -> pd.DataFrame:
    return series.to_frame()


def read_u_series(path: str | Path) -> list[np.ndarray]:
    """u0..uN columns of a u-series CSV, in iteration order."""
    frame = pd.read_csv(path)
    names = sorted(
        (c for c in frame.columns if c.startswith("u") and c[1:].isdigit()), key=lambda c: int(c[1:])
    )
    if not names:
        raise GridMismatchError(f"{path}: no u0..uN columns")
    return [frame[c].to_numpy(dtype=float) for c in names]


def read_reference(path: str | Path) -> np.ndarray:
    return read_reference_series(path)[0]


def pca_frame(sources: dict[str, tuple[np.ndarray, np.ndarray]]) -> pd.DataFrame:
    """sources maps a label to (coordinates of shape (N, 2), weights)."""
    frames = [
        pd.DataFrame({"source": label, "pc1": coords[:, 0], "pc2": coords[:, 1], "weight": weights})
        for label, (coords, weights) in sources.items()
    ]
    return pd.concat(frames, ignore_index=True)


def read_reference_series(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """(ref, ref_stderr) of a reference CSV; stderr is zero when the column is absent."""
    frame = pd.read_csv(path)
    if "ref" not in frame.columns:
        raise GridMismatchError(f"{path}: no 'ref' column")
    stderr = (
        frame["ref_stderr"].to_numpy(dtype=float)
        if "ref_stderr" in frame.columns
        else np.zeros(len(frame))
    )
    return frame["ref"].to_numpy(dtype=float), stderr
