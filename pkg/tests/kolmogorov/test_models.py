"""Tests for the drift zoo, observables and spectra."""

import numpy as np
import pytest
from pydantic import ValidationError

from src.kolmogorov.errors import GridMismatchError, PreconditionError
from src.kolmogorov.models import (
    DriftKind,
    DriftSpec,
    ModelSpec,
    ObservableKind,
    ObservableSpec,
    SpectrumKind,
    build_spectrum,
    drift_eval,
    observable_eval,
)
from src.kolmogorov.spectral_linear import NoiseSpec


class TestDriftSpec:
    def test_cubic_defaults(self) -> None:
        """cubic_bounded fills b0 = 2 and ybar = 2e."""
        spec = DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=3)
        assert spec.b0 == 2.0
        assert spec.ybar == (2.0, 2.0, 2.0)

    def test_quadratic_defaults(self) -> None:
        """quadratic_simple fills b0 = 1."""
        assert DriftSpec(kind=DriftKind.QUADRATIC_SIMPLE, dimension=2).b0 == 1.0

    def test_ybar_length_checked(self) -> None:
        """ybar must have d entries."""
        with pytest.raises(ValidationError, match="ybar has length"):
            DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=3, ybar=(1.0, 1.0))

    def test_cubic_needs_nonzero_ybar(self) -> None:
        """A zero target makes the cutoff scale vanish."""
        with pytest.raises(ValidationError, match="nonzero ybar"):
            DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=2, ybar=(0.0, 0.0))

    def test_dyadic_lambda(self) -> None:
        """Dyadic growth factor must exceed one."""
        with pytest.raises(ValidationError, match="lam > 1"):
            DriftSpec(kind=DriftKind.DYADIC, dimension=4, lam=1.0)


class TestDriftEval:
    def test_zero(self) -> None:
        """Zero drift is zero."""
        spec = DriftSpec(kind=DriftKind.ZERO, dimension=2)
        np.testing.assert_array_equal(drift_eval(spec, 0.0, np.array([1.0, -3.0])), [0.0, 0.0])

    def test_constant(self) -> None:
        """Constant drift is c e."""
        spec = DriftSpec(kind=DriftKind.CONSTANT, dimension=3, constant=0.25)
        np.testing.assert_array_equal(drift_eval(spec, 0.0, np.zeros(3)), [0.25] * 3)

    def test_linear_scale(self) -> None:
        """B0(x) = epsilon x."""
        spec = DriftSpec(kind=DriftKind.LINEAR_SCALE, dimension=2, epsilon=0.5)
        np.testing.assert_array_equal(drift_eval(spec, 0.0, np.array([2.0, -4.0])), [1.0, -2.0])

    def test_cubic_at_target_vanishes(self) -> None:
        """B0(ybar) = 0."""
        spec = DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=3)
        np.testing.assert_array_equal(drift_eval(spec, 0.0, np.full(3, 2.0)), np.zeros(3))

    def test_cubic_value(self) -> None:
        """x = 0, ybar = 2e, b0 = 2: scale 4, diff 2, dist 2 -> 4 * 8 / 12."""
        spec = DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=2)
        np.testing.assert_allclose(drift_eval(spec, 0.0, np.zeros(2)), [32.0 / 12.0] * 2)

    def test_cubic_is_bounded(self) -> None:
        """max |B0(x)| <= b0 max |ybar| = 4 over 10^5 states spanning 1e-3 to 1e100."""
        spec = DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=3)
        rng = np.random.default_rng(7)
        magnitude = 10.0 ** rng.uniform(-3, 100, (100_000, 3))
        x = np.where(rng.random((100_000, 3)) < 0.5, -magnitude, magnitude)
        x[:1000] = 2.0 + rng.standard_normal((1000, 3))
        values = drift_eval(spec, 0.0, x)
        assert np.all(np.isfinite(values))
        assert np.max(np.abs(values)) <= 4.0 * (1 + 1e-12)

    def test_dyadic_conserves_energy_without_forcing(self) -> None:
        """f1 = 0: <x, B0(x)> vanishes for random states."""
        spec = DriftSpec(kind=DriftKind.DYADIC, dimension=10, lam=1.1, f1=0.0)
        x = np.random.default_rng(8).standard_normal((1000, 10))
        flux = np.sum(x * drift_eval(spec, 0.0, x), axis=-1)
        np.testing.assert_allclose(flux, 0.0, atol=1e-10)

    def test_quadratic_value(self) -> None:
        """B0(x) = b0 (ybar - x) |ybar - x|."""
        spec = DriftSpec(kind=DriftKind.QUADRATIC_SIMPLE, dimension=2)
        np.testing.assert_allclose(drift_eval(spec, 0.0, np.array([0.0, 5.0])), [4.0, -9.0])

    def test_dyadic_value(self) -> None:
        """Forcing on mode one plus nearest-neighbour transfer."""
        spec = DriftSpec(kind=DriftKind.DYADIC, dimension=3, lam=2.0, f1=1.0)
        k = np.array([4.0, 16.0, 64.0])
        x = np.array([1.0, 2.0, 3.0])
        expected = np.array(
            [1.0 - k[0] * x[0] * x[1], k[0] * x[0] ** 2 - k[1] * x[1] * x[2], k[1] * x[1] ** 2]
        )
        np.testing.assert_allclose(drift_eval(spec, 0.0, x), expected)

    def test_vectorized(self) -> None:
        """Row vectors of any leading shape evaluate independently."""
        spec = DriftSpec(kind=DriftKind.CUBIC_BOUNDED, dimension=2)
        x = np.random.default_rng(0).standard_normal((4, 5, 2))
        batched = drift_eval(spec, 0.0, x)
        assert batched.shape == x.shape
        np.testing.assert_allclose(batched[2, 3], drift_eval(spec, 0.0, x[2, 3]))

    def test_non_finite_rejected(self) -> None:
        """NaN input raises instead of propagating."""
        spec = DriftSpec(kind=DriftKind.ZERO, dimension=1)
        with pytest.raises(PreconditionError):
            drift_eval(spec, 0.0, np.array([np.nan]))


class TestObservableEval:
    def test_norm_ball_boundary(self) -> None:
        """1{||x|| >= r} counts the sphere itself."""
        spec = ObservableSpec(kind=ObservableKind.INDICATOR_NORM_BALL, radius=1.0)
        x = np.array([[1.0, 0.0], [0.5, 0.5], [3.0, 4.0]])
        np.testing.assert_array_equal(observable_eval(spec, x), [1.0, 0.0, 1.0])

    def test_norm_ball_complement(self) -> None:
        """complement flips the indicator."""
        spec = ObservableSpec(kind=ObservableKind.INDICATOR_NORM_BALL, complement=True)
        np.testing.assert_array_equal(observable_eval(spec, np.array([[0.1, 0.1]])), [1.0])

    def test_coordinate_and_mean(self) -> None:
        """Coordinate picks x_i; coordinate_mean averages."""
        x = np.array([[1.0, 2.0, 6.0]])
        coord = ObservableSpec(kind=ObservableKind.COORDINATE, index=2)
        mean = ObservableSpec(kind=ObservableKind.COORDINATE_MEAN)
        assert observable_eval(coord, x)[0] == 6.0
        assert observable_eval(mean, x)[0] == 3.0

    def test_cell_is_closed(self) -> None:
        """Cell indicator includes its edges."""
        spec = ObservableSpec(
            kind=ObservableKind.INDICATOR_CELL, axes=(0, 2), bounds=(0.0, 1.0, -1.0, 0.0)
        )
        x = np.array([[1.0, 9.0, -1.0], [1.01, 0.0, -0.5], [0.5, 0.0, 0.0]])
        np.testing.assert_array_equal(observable_eval(spec, x), [1.0, 0.0, 1.0])

    def test_empty_cell_rejected(self) -> None:
        """Degenerate rectangles are invalid."""
        with pytest.raises(ValidationError):
            ObservableSpec(kind=ObservableKind.INDICATOR_CELL, bounds=(1.0, 1.0, 0.0, 1.0))

    def test_index_out_of_range(self) -> None:
        """check_dimension catches coordinates beyond d."""
        with pytest.raises(GridMismatchError):
            ObservableSpec(kind=ObservableKind.COORDINATE, index=5).check_dimension(3)


class TestSpectra:
    def test_laplacian(self) -> None:
        """a_k = -k^2."""
        A = build_spectrum(SpectrumKind.LAPLACIAN, 4)
        np.testing.assert_array_equal(A.eigenvalues, [-1.0, -4.0, -9.0, -16.0])

    def test_dyadic(self) -> None:
        """a_i = -lam^(2i)."""
        A = build_spectrum(SpectrumKind.DYADIC, 3, lam=2.0)
        np.testing.assert_array_equal(A.eigenvalues, [-4.0, -16.0, -64.0])

    def test_model_dimension_mismatch(self) -> None:
        """Drift and operator must share d."""
        with pytest.raises(GridMismatchError):
            ModelSpec(
                build_spectrum(SpectrumKind.LAPLACIAN, 3),
                NoiseSpec(),
                DriftSpec(kind=DriftKind.ZERO, dimension=2),
            )
