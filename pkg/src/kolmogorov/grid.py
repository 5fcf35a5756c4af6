"""Mixed-step time grid shared by every stage of the solver."""

from pydantic import BaseModel, ConfigDict, PositiveFloat, model_validator

_RATIO_TOL = 1e-9


def _as_int_ratio(num: float, den: float) -> int | None:
    ratio = num / den
    rounded = round(ratio)
    if rounded < 1 or abs(ratio - rounded) > _RATIO_TOL * max(1.0, ratio):
        return None
    return int(rounded)


class TimeGrid(BaseModel):
    """Horizon T with a fine simulation step and a coarse quadrature step.

    The fine step drives the Euler recursions; the coarse step is the
    resolution of every weight integral. Both horizon ratios are integers.
    """

    model_config = ConfigDict(frozen=True)

    T: PositiveFloat
    dt_fine: PositiveFloat
    dt_coarse: PositiveFloat

    @model_validator(mode="after")
    def _check_ratios(self) -> "TimeGrid":
        if self.dt_fine > self.dt_coarse:
            raise ValueError("dt_fine must not exceed dt_coarse")
        if _as_int_ratio(self.dt_coarse, self.dt_fine) is None:
            raise ValueError("dt_coarse must be an integer multiple of dt_fine")
        if _as_int_ratio(self.T, self.dt_coarse) is None:
            raise ValueError("T must be an integer multiple of dt_coarse")
        return self

    @property
    def n_coarse(self) -> int:
        """Number of coarse steps, T / dt_coarse."""
        return _as_int_ratio(self.T, self.dt_coarse) or 0

    @property
    def stride(self) -> int:
        """Fine steps per coarse step."""
        return _as_int_ratio(self.dt_coarse, self.dt_fine) or 0

    @property
    def n_fine(self) -> int:
        return self.n_coarse * self.stride

    def coarse_times(self) -> list[float]:
        return [j * self.dt_coarse for j in range(self.n_coarse + 1)]

    def index_at(self, t: float) -> int:
        """Coarse index of time t (must lie on the coarse grid)."""
        j = round(t / self.dt_coarse)
        if j < 0 or j > self.n_coarse or abs(j * self.dt_coarse - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a coarse grid point of [0, {self.T}]")
        return int(j)

    def with_fine_step(self, dt_fine: float) -> "TimeGrid":
        return TimeGrid(T=self.T, dt_fine=dt_fine, dt_coarse=self.dt_coarse)
