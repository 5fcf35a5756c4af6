"""End-to-end tests of the command line on tiny experiments."""

import json
from pathlib import Path

import pandas as pd
import pytest

from src.kolmogorov.cli import main
from src.kolmogorov.errors import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK
from tests.conftest import write_config

TINY = """\
model.kind = cubic_bounded
model.d = 2
grid.T = 0.1
run.n_samples = 60
run.seed = 3
run.max_iter = 3
observable.kind = coordinate
reference.n_samples = 80
"""


@pytest.fixture
def tiny(tmp_path: Path) -> Path:
    return write_config(tmp_path, TINY)


def outputs(config: Path) -> Path:
    return config.parent / "out"


class TestSolve:
    def test_writes_tables_and_sidecar(self, tiny: Path) -> None:
        """solve writes u-series, err-history and a metadata sidecar."""
        assert main(["--threads", "1", "solve", "--config", str(tiny)]) == EXIT_OK
        out = outputs(tiny)
        u = pd.read_csv(out / "exp_u.csv")
        assert list(u.columns[:3]) == ["j", "t", "u0"]
        assert len(u) == 11
        err = pd.read_csv(out / "exp_err.csv")
        assert list(err.columns) == ["n", "err"]
        meta = json.loads((out / "exp_solve_meta.json").read_text())
        assert meta["seed"] == 3
        assert meta["iterations"] == len(err)
        assert len(meta["wall_clock_seconds"]) == len(err)
        assert meta["outputs"] == ["exp_u.csv", "exp_err.csv"]
        assert len(meta["config_hash"]) == 64

    def test_byte_identical_across_threads(self, tmp_path: Path) -> None:
        """Same config and seed give the same bytes at any thread count."""
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        one = write_config(tmp_path / "a", TINY)
        four = write_config(tmp_path / "b", TINY)
        assert main(["--threads", "1", "solve", "--config", str(one)]) == EXIT_OK
        assert main(["--threads", "4", "solve", "--config", str(four)]) == EXIT_OK
        for name in ("exp_u.csv", "exp_err.csv"):
            assert (outputs(one) / name).read_bytes() == (outputs(four) / name).read_bytes()

    def test_same_config_twice(self, tiny: Path) -> None:
        """Two solves with one config and seed write identical CSV bytes."""
        assert main(["solve", "--config", str(tiny)]) == EXIT_OK
        first = {name: (outputs(tiny) / name).read_bytes() for name in ("exp_u.csv", "exp_err.csv")}
        assert main(["solve", "--config", str(tiny)]) == EXIT_OK
        for name, data in first.items():
            assert (outputs(tiny) / name).read_bytes() == data

    def test_rerun_from_sidecar(self, tiny: Path) -> None:
        """A metadata sidecar reproduces the run byte for byte."""
        assert main(["solve", "--config", str(tiny)]) == EXIT_OK
        paths = [outputs(tiny) / "exp_u.csv", outputs(tiny) / "exp_err.csv"]
        first = [p.read_bytes() for p in paths]
        for p in paths:
            p.unlink()
        sidecar = outputs(tiny) / "exp_solve_meta.json"
        assert main(["solve", "--config", str(sidecar)]) == EXIT_OK
        assert [p.read_bytes() for p in paths] == first

    def test_gaussian_model_stops_after_one_correction(self, tmp_path: Path) -> None:
        """Zero drift satisfies the tolerance at n = 1."""
        config = write_config(tmp_path, TINY.replace("cubic_bounded", "zero"))
        assert main(["solve", "--config", str(config)]) == EXIT_OK
        err = pd.read_csv(outputs(config) / "exp_err.csv")
        assert list(err["n"]) == [1]
        assert err["err"][0] == 0.0

    def test_divergence_exit_code(self, tmp_path: Path) -> None:
        """A blowing-up run ends with the divergence exit code."""
        body = (
            "model.kind = quadratic_simple\nmodel.d = 1\nmodel.b0 = 1e150\n"
            "grid.T = 1\ngrid.dt_fine = 0.01\nrun.n_samples = 4\nrun.x0 = -1e10\n"
            "observable.kind = coordinate\n"
        )
        config = write_config(tmp_path, body)
        assert main(["solve", "--config", str(config), "--no-shift"]) == EXIT_DIVERGENCE

    def test_quadratic_without_shift_diverges(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Growing err(n) past the threshold ends with exit 3 and keeps the partial tables."""
        body = (
            "model.kind = quadratic_simple\nmodel.d = 10\nrun.n_samples = 500\nrun.seed = 5\n"
            "run.max_iter = 4\nrun.divergence_threshold = 10\n"
        )
        config = write_config(tmp_path, body)
        assert main(["solve", "--config", str(config), "--no-shift"]) == EXIT_DIVERGENCE
        assert "weights diverged" in capsys.readouterr().err
        err = pd.read_csv(outputs(config) / "exp_err.csv")
        assert len(err) == 4
        meta = json.loads((outputs(config) / "exp_solve_meta.json").read_text())
        assert meta["stop_reason"] == "diverged"

    def test_config_error(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """Invalid configs exit 2 and list every problem."""
        config = write_config(tmp_path, "model.kind = cubic\nmodel.d = 0\n")
        assert main(["solve", "--config", str(config)]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "config error: model.kind" in err
        assert "config error: model.d" in err

    def test_missing_config(self, tmp_path: Path) -> None:
        """Nonexistent files are I/O errors."""
        assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO

    def test_corrupted_bank(self, tiny: Path, tmp_path: Path) -> None:
        """A damaged bank file is rejected with exit 4."""
        bad = tmp_path / "bad.kipb"
        bad.write_bytes(b"XXXX" + b"\0" * 100)
        assert main(["solve", "--config", str(tiny), "--bank", str(bad)]) == EXIT_IO

    def test_reference_length_mismatch(self, tiny: Path, tmp_path: Path) -> None:
        """--ref on another grid is refused."""
        ref = tmp_path / "ref.csv"
        ref.write_text("j,t,ref,ref_stderr\n0,0,1,0\n1,0.01,1,0\n", encoding="utf-8")
        assert main(["solve", "--config", str(tiny), "--ref", str(ref)]) == EXIT_CONFIG


class TestBank:
    def test_generate_inspect_and_reuse(
        self, tiny: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """A saved bank describes itself and reproduces the in-memory solve."""
        bank = tmp_path / "banks" / "tiny.kipb"
        assert main(["bank", "generate", "--config", str(tiny), "--out", str(bank)]) == EXIT_OK
        assert (tmp_path / "banks" / "tiny.kipb.json").exists()

        assert main(["bank", "inspect", str(bank)]) == EXIT_OK
        printed = capsys.readouterr().out
        assert "magic: KIPB" in printed
        assert "n_samples: 60" in printed
        assert "sha256: " in printed

        assert main(["solve", "--config", str(tiny)]) == EXIT_OK
        fresh = (outputs(tiny) / "exp_u.csv").read_bytes()
        assert main(["solve", "--config", str(tiny), "--bank", str(bank)]) == EXIT_OK
        assert (outputs(tiny) / "exp_u.csv").read_bytes() == fresh

    def test_bank_from_another_spectrum(self, tiny: Path, tmp_path: Path) -> None:
        """A bank drawn on the Laplacian spectrum is refused for a dyadic model."""
        bank = tmp_path / "tiny.kipb"
        assert main(["bank", "generate", "--config", str(tiny), "--out", str(bank)]) == EXIT_OK
        meta = json.loads((tmp_path / "tiny.kipb.json").read_text())
        assert len(meta["operator_checksum"]) == 64
        (tmp_path / "dyadic").mkdir()
        dyadic = write_config(tmp_path / "dyadic", TINY + "model.spectrum = dyadic\n")
        assert main(["solve", "--config", str(dyadic), "--bank", str(bank)]) == EXIT_CONFIG


class TestReferenceAndCompare:
    def test_reference_then_compare(
        self, tiny: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """compare reads solve and reference outputs and prints a table."""
        assert main(["reference", "--config", str(tiny)]) == EXIT_OK
        ref = outputs(tiny) / "exp_reference.csv"
        assert pd.read_csv(ref).columns.tolist() == ["j", "t", "ref", "ref_stderr"]
        assert (outputs(tiny) / "exp_reference_meta.json").exists()

        assert main(["solve", "--config", str(tiny), "--ref", str(ref)]) == EXIT_OK
        u = pd.read_csv(outputs(tiny) / "exp_u.csv")
        assert "ref" in u.columns
        assert "abs_err" in pd.read_csv(outputs(tiny) / "exp_err.csv").columns

        capsys.readouterr()
        run_csv = outputs(tiny) / "exp_u.csv"
        assert main(["compare", "--run", str(run_csv), "--ref", str(ref)]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "n,sup_abs_error,final_abs_error,log10_sup_abs_error,log10_final_abs_error"
        assert len(lines) == 1 + sum(c.startswith("u") and c[1:].isdigit() for c in u.columns)


class TestDistributions:
    def test_probmap(self, tiny: Path) -> None:
        """Cell masses plus overflow equal the recorded mean weight."""
        assert main(["probmap", "--config", str(tiny), "--grid", "4,3"]) == EXIT_OK
        frame = pd.read_csv(outputs(tiny) / "exp_probmap.csv")
        assert list(frame.columns) == ["x_lo", "x_hi", "y_lo", "y_hi", "mass", "reference_mass"]
        assert len(frame) == 12
        meta = json.loads((outputs(tiny) / "exp_probmap_meta.json").read_text())
        assert meta["extra"]["mass_total"] == meta["extra"]["mean_weight"]
        total = frame["mass"].sum() + meta["extra"]["overflow"]
        assert total == pytest.approx(meta["extra"]["mean_weight"], rel=1e-9)

    def test_probmap_bad_time(self, tiny: Path) -> None:
        """--at-time must be a coarse grid point."""
        argv = ["probmap", "--config", str(tiny), "--grid", "2,2", "--at-time", "0.5"]
        assert main(argv) == EXIT_CONFIG

    def test_histogram(self, tiny: Path) -> None:
        """Three variants of bins + 2 rows each."""
        argv = ["histogram", "--config", str(tiny), "--component", "1", "--bins", "5"]
        assert main(argv) == EXIT_OK
        frame = pd.read_csv(outputs(tiny) / "exp_histogram.csv")
        assert len(frame) == 3 * 7

    def test_histogram_component_range(self, tiny: Path) -> None:
        """Components beyond d are rejected."""
        assert main(["histogram", "--config", str(tiny), "--component", "2"]) == EXIT_CONFIG

    def test_pca(self, tiny: Path) -> None:
        """Reference and shifted samples projected on the same plane."""
        assert main(["pca", "--config", str(tiny), "--at-time", "0.05"]) == EXIT_OK
        frame = pd.read_csv(outputs(tiny) / "exp_pca.csv")
        assert list(frame.columns) == ["source", "pc1", "pc2", "weight"]
        assert frame["source"].value_counts().to_dict() == {"reference": 80, "shifted": 60}
