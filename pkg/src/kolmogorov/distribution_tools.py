"""Distribution views of a finished run: cell probability maps, weighted
histograms and PCA projections.

The per-sample total weights w_i = sum_{k<=n} I^k_i do not depend on phi, so
every cell, bin or projection below reuses the same weight vector.

Masses are exactly rounded sums (`math.fsum`), so the mass of a partition
(cells plus overflow, bins plus under/overflow) is bit-equal to the mean
weight of the whole sample set.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, PositiveInt, model_validator
from scipy import linalg

from src.kolmogorov.errors import PreconditionError
from src.kolmogorov.path_bank import ShiftedSamples

logger = logging.getLogger(__name__)

DEFAULT_PADDING = 0.1


class CellGrid(BaseModel):
    """n_x by n_y partition of a rectangle in the (p, q) coordinate plane.

    Cells are right-open except the last one along each axis, which is closed.
    """

    model_config = ConfigDict(frozen=True)

    axes: tuple[int, int] = (0, 1)
    bounds: tuple[float, float, float, float]
    nx: PositiveInt = 40
    ny: PositiveInt = 25

    @model_validator(mode="after")
    def _check_bounds(self) -> "CellGrid":
        x_lo, x_hi, y_lo, y_hi = self.bounds
        if not (x_lo < x_hi and y_lo < y_hi):
            raise ValueError("cell grid bounds must be a nonempty rectangle")
        return self

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_bounds(self) -> pd.DataFrame:
        x_lo, x_hi, y_lo, y_hi = self.bounds
        xs = np.linspace(x_lo, x_hi, self.nx + 1)
        ys = np.linspace(y_lo, y_hi, self.ny + 1)
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        return pd.DataFrame(
            {"x_lo": xs[ix], "x_hi": xs[ix + 1], "y_lo": ys[iy], "y_hi": ys[iy + 1]}
        )

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index (x-major) of each projected point; n_cells marks overflow."""
        x_lo, x_hi, y_lo, y_hi = self.bounds
        ix = _bin_index(points[:, 0], x_lo, x_hi, self.nx)
        iy = _bin_index(points[:, 1], y_lo, y_hi, self.ny)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return np.where(inside, ix * self.ny + iy, self.n_cells)


def _bin_index(x: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    """-1 below lo, n above hi, else the right-open bin (hi itself lands in bin n-1)."""
    idx = np.floor((x - lo) / (hi - lo) * n).astype(np.int64)
    idx = np.where(x == hi, n - 1, idx)
    return np.where(x < lo, -1, np.where(x > hi, n, np.clip(idx, 0, n - 1)))


def padded_bounds(values: np.ndarray, padding: float = DEFAULT_PADDING) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    if span == 0:
        return lo - 0.5, hi + 0.5
    return lo - padding * span, hi + padding * span


@dataclass(frozen=True, eq=False)
class WeightedSampleSet:
    """Samples at one coarse index with their cumulative weights."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.points.shape[0])

    def mean_weight(self) -> float:
        return math.fsum(self.weights) / self.n_samples


@dataclass(frozen=True, eq=False)
class _Partition:
    """Weights grouped by bin index."""

    groups: list[np.ndarray]
    n_samples: int

    @classmethod
    def of(cls, index: np.ndarray, weights: np.ndarray, n_bins: int) -> "_Partition":
        order = np.argsort(index, kind="stable")
        counts = np.bincount(index, minlength=n_bins)
        return cls(np.split(weights[order], np.cumsum(counts)[:-1]), int(weights.size))

    def masses(self) -> np.ndarray:
        return np.array([math.fsum(g) for g in self.groups]) / self.n_samples

    def total(self) -> float:
        return math.fsum(np.concatenate(self.groups)) / self.n_samples


def weighted_samples(
    samples: ShiftedSamples, total_weights: np.ndarray, j: int
) -> WeightedSampleSet:
    if not 0 <= j <= samples.n_coarse:
        raise PreconditionError(f"coarse index {j} outside 0..{samples.n_coarse}")
    weights = np.asarray(total_weights[:, j], dtype=float)
    if not np.all(np.isfinite(weights)):
        raise PreconditionError("weights must be finite")
    return WeightedSampleSet(samples.at(j), weights)


@dataclass(frozen=True, eq=False)
class CellMap:
    grid: CellGrid
    masses: np.ndarray
    overflow: float
    partition: _Partition

    def total(self) -> float:
        """Mass of every cell plus the overflow, summed exactly."""
        return self.partition.total()

    def to_frame(self) -> pd.DataFrame:
        frame = self.grid.cell_bounds()
        frame["mass"] = self.masses
        return frame


def cell_probability_map(sample_set: WeightedSampleSet, grid: CellGrid) -> CellMap:
    """Cell c gets (1/N_s) sum_i 1[point_i in c] w_i; the rest goes to overflow."""
    p, q = grid.axes
    if max(p, q) >= sample_set.points.shape[1]:
        raise PreconditionError(f"projection axes {grid.axes} out of range")
    idx = grid.cell_index(sample_set.points[:, [p, q]])
    partition = _Partition.of(idx, np.asarray(sample_set.weights, dtype=float), grid.n_cells + 1)
    masses = partition.masses()
    return CellMap(grid, masses[:-1], float(masses[-1]), partition)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    masses: np.ndarray
    underflow: float
    overflow: float
    partition: _Partition

    def total(self) -> float:
        return self.partition.total()


def weighted_histogram(
    values: np.ndarray,
    weights: np.ndarray | None,
    bins: int,
    value_range: tuple[float, float],
) -> Histogram:
    """Bin masses (1/N) sum_i 1[value_i in bin] w_i with explicit under/overflow."""
    if bins < 1:
        raise PreconditionError("histogram needs at least one bin")
    lo, hi = value_range
    if not lo < hi:
        raise PreconditionError(f"empty histogram range {value_range}")
    values = np.asarray(values, dtype=float)
    w = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    # bin 0 holds the underflow and bin bins + 1 the overflow
    idx = _bin_index(values, lo, hi, bins) + 1
    partition = _Partition.of(idx, w, bins + 2)
    sums = partition.masses()
    return Histogram(
        np.linspace(lo, hi, bins + 1), sums[1:-1], float(sums[0]), float(sums[-1]), partition
    )


def histogram_variants(
    component: int,
    reference_states: np.ndarray,
    sample_set: WeightedSampleSet,
    bins: int,
    value_range: tuple[float, float] | None = None,
) -> pd.DataFrame:
    """Nonlinear-process samples, unweighted Gaussian samples and reweighted
    Gaussian samples binned on shared edges.

    Rows with lo = -inf / hi = inf carry the under/overflow mass.
    """
    ref = reference_states[:, component]
    gauss = sample_set.points[:, component]
    if value_range is None:
        value_range = padded_bounds(ref)
    variants = {
        "reference": weighted_histogram(ref, None, bins, value_range),
        "gaussian": weighted_histogram(gauss, None, bins, value_range),
        "reweighted": weighted_histogram(gauss, sample_set.weights, bins, value_range),
    }
    frames = []
    for name, hist in variants.items():
        lo = np.concatenate([[-np.inf], hist.edges[:-1], [hist.edges[-1]]])
        hi = np.concatenate([[hist.edges[0]], hist.edges[1:], [np.inf]])
        mass = np.concatenate([[hist.underflow], hist.masses, [hist.overflow]])
        frames.append(pd.DataFrame({"variant": name, "lo": lo, "hi": hi, "mass": mass}))
    return pd.concat(frames, ignore_index=True)


def histogram_l1_distance(a: Histogram, b: Histogram) -> float:
    """L1 distance between the histograms normalised to unit in-range mass."""
    return float(np.sum(np.abs(a.masses / np.sum(a.masses) - b.masses / np.sum(b.masses))))


@dataclass(frozen=True, eq=False)
class PCAProjection:
    """Top-two principal axes (columns of `axes`) of a sample cloud."""

    mean: np.ndarray
    axes: np.ndarray
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    coordinates: np.ndarray

    def project(self, samples: np.ndarray) -> np.ndarray:
        return (np.asarray(samples, dtype=float) - self.mean) @ self.axes


def pca_project(samples: np.ndarray) -> PCAProjection:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise PreconditionError("PCA needs at least two samples")
    if samples.shape[1] < 2:
        raise PreconditionError("PCA projection needs at least two coordinates")
    mean = np.mean(samples, axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (samples.shape[0] - 1)
    values, vectors = linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    total = float(np.sum(values))
    if total <= 0:
        raise PreconditionError("degenerate covariance: samples have zero spread")
    top = vectors[:, :2].copy()
    for k in range(2):
        if top[np.argmax(np.abs(top[:, k])), k] < 0:
            top[:, k] = -top[:, k]
    explained = np.clip(values[:2], 0.0, None)
    return PCAProjection(mean, top, explained, explained / total, centered @ top)
