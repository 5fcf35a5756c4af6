"""Experiment configuration files and runtime settings.

Experiment files are line oriented:

    # cubic bounded drift, d = 20
    model.kind = cubic_bounded
    model.d = 20
    grid.dt_coarse = 0.01
    run.x0 = e

Every key is `<section>.<name>`; unknown keys are rejected so typos surface.
Runtime settings (threads, memory cap, logging, telemetry) come from the
environment instead and are ignored by the config hash.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import (
    AliasChoices,
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.kolmogorov.errors import ConfigError
from src.kolmogorov.grid import TimeGrid
from src.kolmogorov.iteration_engine import DEFAULT_DIVERGENCE_THRESHOLD
from src.kolmogorov.mc_reference import DEFAULT_REFERENCE_DT, DEFAULT_REFERENCE_SAMPLES
from src.kolmogorov.models import (
    DriftKind,
    DriftSpec,
    ModelSpec,
    ObservableKind,
    ObservableSpec,
    SpectrumKind,
    build_spectrum,
)
from src.kolmogorov.path_bank import DEFAULT_MAX_BYTES
from src.kolmogorov.seeds import REFERENCE_NAMESPACE, derive_seed
from src.kolmogorov.spectral_linear import NoiseSpec

logger = logging.getLogger(__name__)


class KolmogorovSettings(BaseSettings):
    """Runtime settings read from KOLMOGOROV_* environment variables or `.env`.

    Unknown environment variables are ignored and a non-integer `threads`
    placeholder falls back to the default.
    """

    model_config = SettingsConfigDict(
        env_prefix="KOLMOGOROV_",
        env_file=".env",
        extra="ignore",
        populate_by_name=True,
    )

    # 0 means one worker per CPU
    threads: int = 0
    max_bank_bytes: int = DEFAULT_MAX_BYTES
    log_level: str = "INFO"

    # Azure Application Insights settings
    applicationinsights_connection_string: str = Field(
        default="",
        validation_alias=AliasChoices(
            "KOLMOGOROV_APPLICATIONINSIGHTS_CONNECTION_STRING",
            "APPLICATIONINSIGHTS_CONNECTION_STRING",
        ),
    )

    @model_validator(mode="before")
    @classmethod
    def _sanitize(cls, values: dict[str, object]) -> dict[str, object]:
        if isinstance(values, dict):
            threads_val = values.get("threads")
            if isinstance(threads_val, str):
                try:
                    int(threads_val.strip())
                except (ValueError, TypeError):
                    values.pop("threads", None)
        return values


def _split_floats(value: object) -> object:
    if isinstance(value, str):
        return tuple(float(part) for part in value.split(",") if part.strip())
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class ModelSection(_Section):
    kind: DriftKind
    d: PositiveInt
    sigma: NonNegativeFloat = 1.0
    spectrum: SpectrumKind | None = None
    epsilon: float = 0.0
    constant: float = 0.0
    b0: float | None = None
    ybar: tuple[float, ...] | None = None
    lam: float = Field(default=1.1, alias="lambda")
    f1: float = 2.0

    @field_validator("ybar", mode="before")
    @classmethod
    def _split_ybar(cls, value: object) -> object:
        return _split_floats(value)

    @property
    def spectrum_kind(self) -> SpectrumKind:
        if self.spectrum is not None:
            return self.spectrum
        return SpectrumKind.DYADIC if self.kind == DriftKind.DYADIC else SpectrumKind.LAPLACIAN


class GridSection(_Section):
    T: PositiveFloat = 1.0
    dt_fine: PositiveFloat = 1e-3
    dt_coarse: PositiveFloat = 1e-2


class RunSection(_Section):
    n_samples: PositiveInt = 10_000
    seed: NonNegativeInt = 0
    tol: PositiveFloat = 1e-2
    max_iter: PositiveInt = 10
    x0: str = "e"
    shift: bool = True
    clip_weights: PositiveFloat | None = None
    divergence_threshold: PositiveFloat = DEFAULT_DIVERGENCE_THRESHOLD


class ObservableSection(_Section):
    kind: ObservableKind = ObservableKind.INDICATOR_NORM_BALL
    radius: PositiveFloat = 1.0
    complement: bool = False
    index: NonNegativeInt = 0
    axes: tuple[NonNegativeInt, NonNegativeInt] = (0, 1)
    bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    @field_validator("axes", mode="before")
    @classmethod
    def _split_axes(cls, value: object) -> object:
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(","))
        return value

    @field_validator("bounds", mode="before")
    @classmethod
    def _split_bounds(cls, value: object) -> object:
        return _split_floats(value)


class ReferenceSection(_Section):
    n_samples: PositiveInt = DEFAULT_REFERENCE_SAMPLES
    dt_fine: PositiveFloat = DEFAULT_REFERENCE_DT
    seed: NonNegativeInt | None = None


class OutputSection(_Section):
    dir: str = "results"


class ExperimentConfig(_Section):
    """A fully validated experiment."""

    model: ModelSection
    grid: GridSection = GridSection()
    run: RunSection = RunSection()
    observable: ObservableSection = ObservableSection()
    reference: ReferenceSection = ReferenceSection()
    output: OutputSection = OutputSection()

    def time_grid(self) -> TimeGrid:
        return TimeGrid(T=self.grid.T, dt_fine=self.grid.dt_fine, dt_coarse=self.grid.dt_coarse)

    def reference_grid(self) -> TimeGrid:
        return self.time_grid().with_fine_step(self.reference.dt_fine)

    def drift_spec(self) -> DriftSpec:
        m = self.model
        return DriftSpec(
            kind=m.kind,
            dimension=m.d,
            epsilon=m.epsilon,
            constant=m.constant,
            b0=m.b0,
            ybar=_broadcast(m.ybar, m.d) if m.ybar is not None else None,
            lam=m.lam,
            f1=m.f1,
        )

    def model_spec(self) -> ModelSpec:
        operator = build_spectrum(self.model.spectrum_kind, self.model.d, self.model.lam)
        return ModelSpec(operator, NoiseSpec(sigma=self.model.sigma), self.drift_spec())

    def x0_vector(self) -> np.ndarray:
        return parse_x0(self.run.x0, self.model.d)

    def observable_spec(self) -> ObservableSpec:
        o = self.observable
        return ObservableSpec(
            kind=o.kind,
            radius=o.radius,
            complement=o.complement,
            index=o.index,
            axes=o.axes,
            bounds=o.bounds,
        )

    def reference_seed(self) -> int:
        if self.reference.seed is not None:
            return self.reference.seed
        return derive_seed(self.run.seed, REFERENCE_NAMESPACE)

    def config_hash(self) -> str:
        canonical = self.model_dump_json(by_alias=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def _broadcast(values: tuple[float, ...], d: int) -> tuple[float, ...]:
    """A single value c stands for c * e."""
    return values * d if len(values) == 1 else values


def parse_x0(spec: str, d: int) -> np.ndarray:
    """`e` (all ones), `e1` (first basis vector), `zero`, or a comma list of d values."""
    key = spec.strip().lower()
    if key == "e":
        return np.ones(d)
    if key == "e1":
        x0 = np.zeros(d)
        x0[0] = 1.0
        return x0
    if key in ("zero", "0"):
        return np.zeros(d)
    values = np.array([float(part) for part in key.split(",")])
    if values.shape != (d,):
        raise ValueError(f"x0 has {values.size} entries, expected {d}")
    return values


def _parse_lines(text: str) -> tuple[dict[str, dict[str, str]], list[str]]:
    raw: dict[str, dict[str, str]] = {}
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        section, dot, name = key.partition(".")
        if not dot or not section or not name or "." in name:
            errors.append(f"line {lineno}: key {key!r} must look like 'section.name'")
            continue
        entries = raw.setdefault(section, {})
        if name in entries:
            errors.append(f"line {lineno}: duplicate key {key!r}")
        entries[name] = value
    return raw, errors


def _format_validation(error: ValidationError, prefix: str = "") -> list[str]:
    messages = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"])
        if item["type"] == "extra_forbidden":
            messages.append(f"{prefix}{loc}: unknown key")
        else:
            messages.append(f"{prefix}{loc}: {item['msg']}")
    return messages


def _semantic_errors(config: ExperimentConfig) -> list[str]:
    errors: list[str] = []
    m = config.model
    try:
        config.time_grid()
    except ValidationError as e:
        errors.extend(
            f"grid.dt_coarse / grid.dt_fine / grid.T: {item['msg']}" for item in e.errors()
        )
    try:
        config.reference_grid()
    except ValidationError as e:
        errors.extend(
            f"reference.dt_fine / grid.dt_coarse: {item['msg']}" for item in e.errors()
        )
    try:
        config.x0_vector()
    except ValueError as e:
        errors.append(f"run.x0: {e}")
    if m.ybar is not None and len(m.ybar) not in (1, m.d):
        errors.append(f"model.ybar: has {len(m.ybar)} entries, expected 1 or {m.d}")
    else:
        try:
            config.drift_spec()
        except ValidationError as e:
            errors.extend(_format_validation(e, prefix="model."))
    if m.spectrum_kind == SpectrumKind.DYADIC and m.lam <= 1:
        errors.append("model.lambda: dyadic spectrum requires lambda > 1")
    o = config.observable
    if o.kind in (ObservableKind.COORDINATE, ObservableKind.SINE) and o.index >= m.d:
        errors.append(f"observable.index: {o.index} out of range for model.d={m.d}")
    if o.kind == ObservableKind.INDICATOR_CELL:
        if max(o.axes) >= m.d:
            errors.append(f"observable.axes: {o.axes} out of range for model.d={m.d}")
        x_lo, x_hi, y_lo, y_hi = o.bounds
        if not (x_lo < x_hi and y_lo < y_hi):
            errors.append("observable.bounds: rectangle is empty")
    return errors


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every problem found."""
    raw, errors = _parse_lines(text)
    if "model" not in raw:
        errors.append("model: section is required (at least model.kind and model.d)")
    if errors:
        raise ConfigError(errors)
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from None
    semantic = _semantic_errors(config)
    if semantic:
        raise ConfigError(semantic)
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an experiment file, or the config embedded in a run metadata sidecar."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        from src.kolmogorov.outputs import RunMetadata

        try:
            text = RunMetadata.model_validate_json(text).config_text
        except ValidationError as e:
            raise ConfigError(_format_validation(e, prefix=f"{path.name}: ")) from None
    logger.debug("Loaded config %s", path)
    return parse_config(text)


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list | tuple):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: ExperimentConfig) -> str:
    """Canonical `key = value` text; parse_config(render_config(c)) == c."""
    lines = []
    for section, values in config_to_dict(config).items():
        for name, value in values.items():
            if value is not None:
                lines.append(f"{section}.{name} = {_render_value(value)}")
    return "\n".join(lines) + "\n"


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True)
