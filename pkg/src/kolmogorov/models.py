"""Drift zoo B0, observables phi and the diagonal spectra they are paired with."""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from src.kolmogorov.errors import GridMismatchError, PreconditionError
from src.kolmogorov.spectral_linear import LinearOperator, NoiseSpec


class DriftKind(str, Enum):
    """Nonlinear drift models."""

    ZERO = "zero"
    CONSTANT = "constant"
    LINEAR_SCALE = "linear_scale"
    CUBIC_BOUNDED = "cubic_bounded"
    QUADRATIC_SIMPLE = "quadratic_simple"
    DYADIC = "dyadic"


class ObservableKind(str, Enum):
    """Test functions phi."""

    INDICATOR_NORM_BALL = "indicator_norm_ball"
    COORDINATE_MEAN = "coordinate_mean"
    COORDINATE = "coordinate"
    INDICATOR_CELL = "indicator_cell"
    SINE = "sine"
    CONSTANT = "constant"


class SpectrumKind(str, Enum):
    """Diagonal spectra for A."""

    LAPLACIAN = "laplacian"
    DYADIC = "dyadic"


_DEFAULT_B0 = {DriftKind.CUBIC_BOUNDED: 2.0, DriftKind.QUADRATIC_SIMPLE: 1.0}


class DriftSpec(BaseModel):
    """A drift B0(t, x) on R^d.

    `ybar` defaults to 2e for the cubic and quadratic models and `b0` to 2
    (cubic) or 1 (quadratic).
    """

    model_config = ConfigDict(frozen=True)

    kind: DriftKind
    dimension: PositiveInt
    epsilon: float = 0.0
    constant: float = 0.0
    b0: float | None = None
    ybar: tuple[float, ...] | None = None
    lam: float = Field(default=1.1, description="Dyadic growth factor, k_i = lam^(2i)")
    f1: float = Field(default=2.0, description="Dyadic forcing on the first mode")

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, values: dict[str, object]) -> dict[str, object]:
        if isinstance(values, dict):
            try:
                kind = DriftKind(values.get("kind"))
            except ValueError:
                return values
            if kind in _DEFAULT_B0:
                values = dict(values)
                if values.get("b0") is None:
                    values["b0"] = _DEFAULT_B0[kind]
                dim = values.get("dimension")
                if values.get("ybar") is None and isinstance(dim, int) and dim > 0:
                    values["ybar"] = (2.0,) * dim
        return values

    @model_validator(mode="after")
    def _check_parameters(self) -> "DriftSpec":
        if self.ybar is not None and len(self.ybar) != self.dimension:
            raise ValueError(f"ybar has length {len(self.ybar)}, expected {self.dimension}")
        if self.kind in _DEFAULT_B0 and self.ybar is None:
            raise ValueError(f"{self.kind.value} requires ybar")
        if self.kind == DriftKind.CUBIC_BOUNDED:
            if self.b0 is None or self.b0 <= 0:
                raise ValueError("cubic_bounded requires b0 > 0")
            if not any(self.ybar or ()):
                raise ValueError("cubic_bounded requires a nonzero ybar")
        if self.kind == DriftKind.DYADIC and self.lam <= 1:
            raise ValueError("dyadic requires lam > 1")
        return self

    def ybar_array(self) -> np.ndarray:
        return np.asarray(self.ybar, dtype=float)

    def dyadic_rates(self) -> np.ndarray:
        return dyadic_rates(self.lam, self.dimension)


class ObservableSpec(BaseModel):
    """A test function phi on R^d."""

    model_config = ConfigDict(frozen=True)

    kind: ObservableKind
    radius: float = Field(default=1.0, gt=0)
    complement: bool = False
    index: int = Field(default=0, ge=0)
    axes: tuple[int, int] = (0, 1)
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    @model_validator(mode="after")
    def _check_cell(self) -> "ObservableSpec":
        x_lo, x_hi, y_lo, y_hi = self.bounds
        if self.kind == ObservableKind.INDICATOR_CELL and not (x_lo < x_hi and y_lo < y_hi):
            raise ValueError("indicator_cell needs a nonempty rectangle")
        return self

    def check_dimension(self, d: int) -> None:
        if self.kind in (ObservableKind.COORDINATE, ObservableKind.SINE) and self.index >= d:
            raise GridMismatchError(f"observable index {self.index} out of range for d={d}")
        if self.kind == ObservableKind.INDICATOR_CELL and max(self.axes) >= d:
            raise GridMismatchError(f"observable axes {self.axes} out of range for d={d}")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """dX = (A X + B0(t, X)) dt + sigma dW."""

    operator: LinearOperator
    noise: NoiseSpec
    drift: DriftSpec

    def __post_init__(self) -> None:
        if self.drift.dimension != self.operator.dimension:
            raise GridMismatchError(
                f"drift dimension {self.drift.dimension} != operator dimension "
                f"{self.operator.dimension}"
            )

    @property
    def dimension(self) -> int:
        return self.operator.dimension


def dyadic_rates(lam: float, d: int) -> np.ndarray:
    return lam ** (2.0 * np.arange(1, d + 1))


def _require_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise PreconditionError("non-finite state passed to drift/observable")


def drift_eval(spec: DriftSpec, t: float, x: np.ndarray) -> np.ndarray:
    """B0(t, x) for row vectors x of shape (..., d). No model depends on t."""
    x = np.asarray(x, dtype=float)
    _require_finite(x)
    if x.shape[-1] != spec.dimension:
        raise GridMismatchError(f"state has dimension {x.shape[-1]}, drift expects {spec.dimension}")

    match spec.kind:
        case DriftKind.ZERO:
            return np.zeros_like(x)
        case DriftKind.CONSTANT:
            return np.full_like(x, spec.constant)
        case DriftKind.LINEAR_SCALE:
            return spec.epsilon * x
        case DriftKind.CUBIC_BOUNDED:
            assert spec.b0 is not None
            ybar = spec.ybar_array()
            scale = spec.b0 * float(np.max(np.abs(ybar)))
            diff = ybar - x
            dist = np.max(np.abs(diff), axis=-1, keepdims=True)
            return scale * diff * diff**2 / (scale + dist**3)
        case DriftKind.QUADRATIC_SIMPLE:
            assert spec.b0 is not None
            diff = spec.ybar_array() - x
            return spec.b0 * diff * np.abs(diff)
        case DriftKind.DYADIC:
            k = spec.dyadic_rates()
            out = np.zeros_like(x)
            out[..., 0] = spec.f1
            if spec.dimension > 1:
                out[..., :-1] -= k[:-1] * x[..., :-1] * x[..., 1:]
                out[..., 1:] += k[:-1] * x[..., :-1] ** 2
            return out
    raise ValueError(f"unknown drift kind: {spec.kind}")


def observable_eval(spec: ObservableSpec, x: np.ndarray) -> np.ndarray:
    """phi(x) for row vectors x of shape (..., d); returns shape (...)."""
    x = np.asarray(x, dtype=float)
    _require_finite(x)

    match spec.kind:
        case ObservableKind.INDICATOR_NORM_BALL:
            outside = np.linalg.norm(x, axis=-1) >= spec.radius
            return (~outside if spec.complement else outside).astype(float)
        case ObservableKind.COORDINATE_MEAN:
            return np.mean(x, axis=-1)
        case ObservableKind.COORDINATE:
            return x[..., spec.index].copy()
        case ObservableKind.SINE:
            return np.sin(x[..., spec.index])
        case ObservableKind.CONSTANT:
            return np.ones(x.shape[:-1])
        case ObservableKind.INDICATOR_CELL:
            p, q = spec.axes
            x_lo, x_hi, y_lo, y_hi = spec.bounds
            inside = (
                (x[..., p] >= x_lo) & (x[..., p] <= x_hi) & (x[..., q] >= y_lo) & (x[..., q] <= y_hi)
            )
            return inside.astype(float)
    raise ValueError(f"unknown observable kind: {spec.kind}")


def build_spectrum(kind: SpectrumKind, d: int, lam: float = 1.1) -> LinearOperator:
    """Laplacian: a_k = -k^2; dyadic: a_i = -lam^(2i)."""
    if d < 1:
        raise PreconditionError("spectrum dimension must be at least 1")
    if kind == SpectrumKind.LAPLACIAN:
        return LinearOperator.diagonal(-(np.arange(1, d + 1, dtype=float) ** 2))
    if kind == SpectrumKind.DYADIC:
        if lam <= 1:
            raise PreconditionError("dyadic spectrum requires lam > 1")
        return LinearOperator.diagonal(-dyadic_rates(lam, d))
    raise ValueError(f"unknown spectrum kind: {kind}")
