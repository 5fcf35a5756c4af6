import json
from pathlib import Path

import numpy as np
import pytest

from src.kolmogorov.errors import GridMismatchError
from src.kolmogorov.iteration_engine import RunReport
from src.kolmogorov.outputs import (
    RunMetadata,
    err_history_frame,
    pca_frame,
    read_reference_series,
    read_u_series,
    u_series_frame,
    write_csv,
    write_metadata,
)
from tests.conftest import small_grid


@pytest.fixture
def report() -> RunReport:
    grid = small_grid()
    u0 = np.linspace(0.0, 1.0, grid.n_coarse + 1)
    return RunReport(
        grid=grid,
        seed=1,
        n_samples=10,
        u=[u0, u0 + 0.1, u0 + 0.11],
        err_history=[0.1, 0.01],
        wall_clock=[0.5, 0.4],
        converged=True,
        stop_reason="converged",
        reference=u0 + 0.1,
        reference_stderr=np.full(grid.n_coarse + 1, 0.01),
        absolute_errors=[0.1, 0.0, 0.01],
    )


class TestTables:
    def test_u_series_columns(self, report: RunReport) -> None:
        """j, t, one column per iterate, then the reference and the smoothed curve."""
        frame = u_series_frame(report, np.zeros(11))
        assert list(frame.columns) == ["j", "t", "u0", "u1", "u2", "ref", "ref_stderr", "u_movmean"]
        assert frame["t"].iloc[-1] == pytest.approx(0.1)

    def test_err_history_rows(self, report: RunReport) -> None:
        """One row per correction; abs_err skips the zeroth iterate."""
        frame = err_history_frame(report)
        assert list(frame["n"]) == [1, 2]
        np.testing.assert_allclose(frame["abs_err"], [0.0, 0.01])

    def test_csv_round_trip_is_exact(self, report: RunReport, tmp_path: Path) -> None:
        """17 significant digits reproduce every float."""
        path = write_csv(u_series_frame(report), tmp_path / "nested" / "run_u.csv")
        series = read_u_series(path)
        assert len(series) == 3
        np.testing.assert_array_equal(series[2], report.u[2])
        ref, stderr = read_reference_series(path)
        np.testing.assert_array_equal(ref, report.reference)
        np.testing.assert_array_equal(stderr, report.reference_stderr)

    def test_unix_line_endings(self, report: RunReport, tmp_path: Path) -> None:
        """Rows end with a bare newline."""
        path = write_csv(err_history_frame(report), tmp_path / "err.csv")
        assert b"\r\n" not in path.read_bytes()

    def test_missing_columns(self, tmp_path: Path) -> None:
        """Files without iterate or reference columns are rejected."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(GridMismatchError):
            read_u_series(path)
        with pytest.raises(GridMismatchError):
            read_reference_series(path)

    def test_reference_without_stderr(self, tmp_path: Path) -> None:
        """stderr defaults to zero."""
        path = tmp_path / "ref.csv"
        path.write_text("j,ref\n0,1.5\n1,2.5\n", encoding="utf-8")
        _, stderr = read_reference_series(path)
        np.testing.assert_array_equal(stderr, [0.0, 0.0])

    def test_pca_frame(self) -> None:
        """Sources are stacked with their labels."""
        frame = pca_frame({"reference": (np.zeros((2, 2)), np.ones(2)), "shifted": (np.ones((3, 2)), np.ones(3))})
        assert frame["source"].tolist() == ["reference"] * 2 + ["shifted"] * 3


class TestMetadata:
    def test_round_trip(self, tmp_path: Path) -> None:
        """Sidecars parse back to the same model."""
        meta = RunMetadata(
            command="solve",
            config_hash="ab" * 32,
            config_text="model.kind = zero\nmodel.d = 1\n",
            seed=4,
            grid={"T": 1.0, "dt_fine": 1e-3, "dt_coarse": 1e-2},
            model={"kind": "zero", "d": 1},
            err_history=[0.0],
        )
        path = write_metadata(meta, tmp_path / "run_meta.json")
        assert RunMetadata.model_validate_json(path.read_text()) == meta
        assert json.loads(path.read_text())["seed"] == 4
