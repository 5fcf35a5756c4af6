"""Tests for the Euler path, shift tables and convolution table."""

import numpy as np
import pytest

from src.kolmogorov.deterministic_path import (
    check_stability,
    convolution_table,
    euler_ode,
    shift_tables,
)
from src.kolmogorov.errors import DivergenceError, GridMismatchError, PreconditionError
from src.kolmogorov.models import DriftKind
from src.kolmogorov.spectral_linear import LinearOperator, NoiseSpec, build_kernel_tables
from tests.conftest import make_model, random_rotation, small_grid


class TestEulerOde:
    def test_linear_decay(self) -> None:
        """B0 = 0, A = -1: y_j = (1 - dt)^j x0."""
        grid = small_grid()
        model = make_model(DriftKind.ZERO, 1)
        y = euler_ode(model, grid, np.array([1.0]))
        assert y.shape == (grid.n_fine + 1, 1)
        assert y[-1, 0] == pytest.approx((1 - grid.dt_fine) ** grid.n_fine, rel=1e-12)

    def test_constant_forcing_approaches_exact(self) -> None:
        """y' = -y + c has y(t) = c (1 - e^{-t}) from zero."""
        grid = small_grid(T=1.0)
        model = make_model(DriftKind.CONSTANT, 1, constant=2.0)
        y = euler_ode(model, grid, np.zeros(1))
        assert y[-1, 0] == pytest.approx(2.0 * (1 - np.exp(-1.0)), abs=2e-3)

    def test_first_order_in_step(self) -> None:
        """The error against c / |a| (1 - e^{a t}) at T = 1 falls like dt_fine."""
        steps = np.array([1e-2, 1e-3, 1e-4])
        model = make_model(DriftKind.CONSTANT, 2, constant=2.0)
        a = model.operator.eigenvalues
        exact = 2.0 / -a * (1 - np.exp(a))
        errors = [
            np.max(np.abs(euler_ode(model, small_grid(T=1.0, dt_fine=h), np.zeros(2))[-1] - exact))
            for h in steps
        ]
        slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.1)

    def test_unstable_step_refused(self) -> None:
        """dt max|a| >= 2 is rejected before any work."""
        with pytest.raises(PreconditionError, match="unstable"):
            check_stability(LinearOperator.diagonal([-400.0]), 0.01)

    def test_divergence_reported(self) -> None:
        """Blow-up of the quadratic ODE names the fine index."""
        grid = small_grid(T=1.0, dt_fine=1e-2)
        model = make_model(DriftKind.QUADRATIC_SIMPLE, 1, b0=1e150)
        with pytest.raises(DivergenceError) as info:
            euler_ode(model, grid, np.array([-1e10]))
        assert info.value.sample is None
        assert info.value.index >= 1

    def test_x0_shape_checked(self) -> None:
        """x0 must be a d-vector."""
        with pytest.raises(GridMismatchError):
            euler_ode(make_model(DriftKind.ZERO, 2), small_grid(), np.zeros(3))


class TestShiftTables:
    def test_coarse_is_subsample(self) -> None:
        """Coarse shift values are the fine ones at multiples of the stride."""
        grid = small_grid()
        model = make_model(DriftKind.CUBIC_BOUNDED, 3)
        y = euler_ode(model, grid, np.ones(3))
        profile = shift_tables(model, grid, y)
        np.testing.assert_array_equal(profile.shift_coarse, profile.shift_fine[:: grid.stride])
        assert profile.shift_coarse.shape == (grid.n_coarse + 1, 3)

    def test_disabled_shift_is_zero(self) -> None:
        """Without shift f = 0 while the path is kept."""
        grid = small_grid()
        model = make_model(DriftKind.CUBIC_BOUNDED, 2)
        y = euler_ode(model, grid, np.ones(2))
        profile = shift_tables(model, grid, y, enabled=False)
        assert not profile.enabled
        assert not np.any(profile.shift_fine)
        np.testing.assert_array_equal(profile.path, y)


class TestConvolutionTable:
    def test_zero_shift_gives_zero(self) -> None:
        """f = 0 gives F = 0."""
        grid = small_grid()
        model = make_model(DriftKind.ZERO, 2)
        profile = shift_tables(model, grid, euler_ode(model, grid, np.ones(2)))
        kernel = build_kernel_tables(model.operator, model.noise, grid)
        assert not np.any(convolution_table(profile, kernel, grid))

    def test_constant_shift_rectangle_rule(self) -> None:
        """f = c: F[0, k] = dt sum_{m=1}^{k} e^{m dt a} c."""
        grid = small_grid()
        model = make_model(DriftKind.CONSTANT, 1, constant=3.0)
        profile = shift_tables(model, grid, euler_ode(model, grid, np.zeros(1)))
        kernel = build_kernel_tables(model.operator, model.noise, grid)
        table = convolution_table(profile, kernel, grid)
        dt = grid.dt_coarse
        for k in (1, 4, grid.n_coarse):
            expected = dt * sum(np.exp(-m * dt) for m in range(1, k + 1)) * 3.0
            assert table[0, k, 0] == pytest.approx(expected, rel=1e-12)
        assert table[5, 5, 0] == 0.0
        assert table[6, 2, 0] == 0.0

    def test_entry_matches_definition(self) -> None:
        """F[j, k] = dt sum_{l=j}^{k-1} e^{(k-l) dt A} f_l on a dense operator."""
        grid = small_grid()
        r = random_rotation(3, seed=11)
        A = LinearOperator.from_dense(r @ np.diag([-1.0, -2.0, -5.0]) @ r.T)
        model = make_model(DriftKind.CUBIC_BOUNDED, 3, operator=A)
        profile = shift_tables(model, grid, euler_ode(model, grid, np.ones(3)))
        kernel = build_kernel_tables(A, NoiseSpec(sigma=1.0), grid)
        table = convolution_table(profile, kernel, grid)
        j, k = 2, 7
        f = profile.shift_coarse
        expected = grid.dt_coarse * sum(kernel.exp_a(k - l) @ f[l] for l in range(j, k))
        np.testing.assert_allclose(table[j, k], expected, rtol=1e-10, atol=1e-13)

    def test_additive_over_split_points(self) -> None:
        """F[j, k] = e^{(k - m) dt A} F[j, m] + F[m, k] for every j < m < k."""
        grid = small_grid()
        r = random_rotation(3, seed=12)
        A = LinearOperator.from_dense(r @ np.diag([-1.0, -3.0, -8.0]) @ r.T)
        model = make_model(DriftKind.CUBIC_BOUNDED, 3, operator=A)
        profile = shift_tables(model, grid, euler_ode(model, grid, np.zeros(3)))
        kernel = build_kernel_tables(A, NoiseSpec(sigma=1.0), grid)
        table = convolution_table(profile, kernel, grid)
        bound = 5 * grid.dt_coarse * np.max(np.abs(profile.shift_coarse))
        n = grid.n_coarse
        for j in range(n - 1):
            for m in range(j + 1, n):
                for k in range(m + 1, n + 1):
                    joined = kernel.exp_a(k - m) @ table[j, m] + table[m, k]
                    assert np.max(np.abs(table[j, k] - joined)) <= bound

    def test_rectangle_rule_is_first_order(self) -> None:
        """Constant f: F[0, n] approaches A^{-1} (e^{TA} - I) f at rate dt, and one
        Richardson step removes the leading error."""
        steps = [0.1, 0.05, 0.025, 0.0125]
        model = make_model(DriftKind.CONSTANT, 2, constant=3.0)
        a = model.operator.eigenvalues
        exact = (np.exp(a) - 1) / a * 3.0
        finals = []
        for dt in steps:
            grid = small_grid(T=1.0, dt_fine=dt, dt_coarse=dt)
            profile = shift_tables(model, grid, euler_ode(model, grid, np.zeros(2)))
            kernel = build_kernel_tables(model.operator, model.noise, grid)
            finals.append(convolution_table(profile, kernel, grid)[0, grid.n_coarse])
        errors = [np.max(np.abs(f - exact)) for f in finals]
        slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.1)
        extrapolated = 2 * finals[-1] - finals[-2]
        assert np.max(np.abs(extrapolated - exact)) < 0.1 * errors[-1]
