"""Command line entry point: `kolmogorov <command> ...`.

Exit codes: 0 ok, 2 configuration or precondition error, 3 numerical
divergence, 4 I/O error or corrupted bank file.
"""

import argparse
import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.kolmogorov import path_bank
from src.kolmogorov.config import (
    ExperimentConfig,
    KolmogorovSettings,
    config_to_dict,
    load_config,
    render_config,
)
from src.kolmogorov.distribution_tools import (
    CellGrid,
    WeightedSampleSet,
    cell_probability_map,
    histogram_variants,
    padded_bounds,
    pca_project,
    weighted_samples,
)
from src.kolmogorov.errors import (
    EXIT_DIVERGENCE,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    DivergenceError,
    GridMismatchError,
    KolmogorovError,
    PreconditionError,
)
from src.kolmogorov.iteration_engine import RunReport, moving_mean, run
from src.kolmogorov.mc_reference import compare, euler_maruyama_run, simulate_states
from src.kolmogorov.outputs import (
    FLOAT_FORMAT,
    RunMetadata,
    err_history_frame,
    grid_dict,
    pca_frame,
    read_reference,
    read_reference_series,
    read_u_series,
    reference_frame,
    u_series_frame,
    write_csv,
    write_metadata,
)
from src.kolmogorov.parallel import resolve_threads
from src.kolmogorov.seeds import BANK_NAMESPACE, derive_seed
from src.kolmogorov.telemetry import create_telemetry

logger = logging.getLogger(__name__)

DEFAULT_BINS = 40


@dataclass(frozen=True)
class Runtime:
    settings: KolmogorovSettings
    threads: int


@dataclass(frozen=True)
class Experiment:
    """A loaded config plus where its outputs go."""

    config: ExperimentConfig
    stem: str

    @classmethod
    def load(cls, path: str) -> "Experiment":
        p = Path(path)
        stem = p.stem.removesuffix("_meta").rsplit("_", 1)[0] if p.suffix == ".json" else p.stem
        return cls(load_config(p), stem)

    def output(self, suffix: str) -> Path:
        return Path(self.config.output.dir) / f"{self.stem}_{suffix}"

    def metadata(self, command: str, outputs: list[Path], **fields: object) -> RunMetadata:
        c = self.config
        return RunMetadata.model_validate(
            {
                "command": command,
                "config_hash": c.config_hash(),
                "config_text": render_config(c),
                "seed": c.run.seed,
                "grid": grid_dict(c.time_grid()),
                "model": config_to_dict(c)["model"],
                "outputs": [p.name for p in outputs],
                **fields,
            }
        )


def _parse_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_bounds(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected x_lo,x_hi,y_lo,y_hi, got {text!r}")
    x_lo, x_hi, y_lo, y_hi = (float(p) for p in parts)
    return x_lo, x_hi, y_lo, y_hi


def _coarse_index(exp: Experiment, at_time: float | None) -> int:
    grid = exp.config.time_grid()
    if at_time is None:
        return grid.n_coarse
    try:
        return grid.index_at(at_time)
    except ValueError as e:
        raise PreconditionError(f"--at-time: {e}") from None


def _solve(
    exp: Experiment,
    rt: Runtime,
    *,
    shift: bool,
    bank_path: str | None = None,
    reference_series: tuple[np.ndarray, np.ndarray] | None = None,
    clip_weights: float | None = None,
) -> RunReport:
    c = exp.config
    model = c.model_spec()
    grid = c.time_grid()
    bank = None
    if bank_path is not None:
        bank = path_bank.load(bank_path)
        bank.check_compatible(grid, model.dimension)
        bank.check_operator(model.operator)
    telemetry = create_telemetry(
        rt.settings.applicationinsights_connection_string,
        {"config_hash": c.config_hash()[:16], "drift": c.model.kind.value},
    )
    try:
        return run(
            model,
            grid,
            c.x0_vector(),
            c.observable_spec(),
            c.run.n_samples,
            c.run.seed,
            c.run.tol,
            c.run.max_iter,
            bank=bank,
            shift=shift,
            threads=rt.threads,
            clip_weights=clip_weights if clip_weights is not None else c.run.clip_weights,
            reference_series=reference_series,
            telemetry=telemetry,
            max_bytes=rt.settings.max_bank_bytes,
            divergence_threshold=c.run.divergence_threshold,
        )
    finally:
        telemetry.flush()


def _write_run(
    exp: Experiment, report: RunReport, *, shift: bool, movmean: int | None
) -> list[Path]:
    smoothed = moving_mean(report.final, movmean) if movmean else None
    outputs = [
        write_csv(u_series_frame(report, smoothed), exp.output("u.csv")),
        write_csv(err_history_frame(report), exp.output("err.csv")),
    ]
    c = exp.config
    metadata = exp.metadata(
        "solve",
        outputs,
        bank_seed=derive_seed(c.run.seed, BANK_NAMESPACE),
        tol=c.run.tol,
        max_iter=c.run.max_iter,
        iterations=report.iterations,
        converged=report.converged,
        stop_reason=report.stop_reason,
        err_history=report.err_history,
        bank_checksum=report.bank_checksum,
        wall_clock_seconds=report.wall_clock,
        extra={"shift": shift, "movmean": movmean},
    )
    write_metadata(metadata, exp.output("solve_meta.json"))
    return outputs


def cmd_bank_generate(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    c = exp.config
    bank = path_bank.generate(
        c.model_spec().operator,
        c.time_grid(),
        c.run.n_samples,
        derive_seed(c.run.seed, BANK_NAMESPACE),
        threads=rt.threads,
        max_bytes=rt.settings.max_bank_bytes,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    path_bank.save(bank, out)
    metadata = exp.metadata(
        "bank generate",
        [out],
        bank_seed=bank.seed,
        bank_checksum=bank.checksum(),
        operator_checksum=bank.operator_checksum,
    )
    write_metadata(metadata, path_bank.sidecar_path(out))
    return EXIT_OK


def cmd_bank_inspect(args: argparse.Namespace, rt: Runtime) -> int:
    header = path_bank.read_header(args.file)
    bank = path_bank.load(args.file)
    for name in path_bank.HEADER_DTYPE.names or ():
        value = header[name]
        shown = bytes(value).decode("ascii") if name == "magic" else value.item()
        print(f"{name}: {shown}")
    print(f"sha256: {bank.checksum()}")
    print(f"operator_sha256: {bank.operator_checksum or 'unknown'}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    shift = exp.config.run.shift and not args.no_shift
    reference_series = None
    if args.ref is not None:
        reference_series = read_reference_series(args.ref)
        expected = exp.config.time_grid().n_coarse + 1
        if reference_series[0].size != expected:
            raise GridMismatchError(
                f"--ref {args.ref} has {reference_series[0].size} points, grid has {expected}"
            )
    try:
        report = _solve(
            exp,
            rt,
            shift=shift,
            bank_path=args.bank,
            reference_series=reference_series,
            clip_weights=args.clip_weights,
        )
    except DivergenceError as e:
        if e.report is not None:
            _write_run(exp, e.report, shift=shift, movmean=None)
        raise
    _write_run(exp, report, shift=shift, movmean=args.movmean)
    logger.info(
        "Solve finished: %s after %d iterations, u(T)=%.6g",
        report.stop_reason,
        report.iterations,
        report.final[-1],
    )
    return EXIT_OK


def cmd_reference(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    c = exp.config
    series = euler_maruyama_run(
        c.model_spec(),
        c.reference_grid(),
        c.x0_vector(),
        c.reference.n_samples,
        c.reference_seed(),
        c.observable_spec(),
        threads=rt.threads,
    )
    outputs = [write_csv(reference_frame(series), exp.output("reference.csv"))]
    metadata = exp.metadata(
        "reference",
        outputs,
        reference_seed=c.reference_seed(),
        extra={"reference_n_samples": c.reference.n_samples, "reference_dt": c.reference.dt_fine},
    )
    write_metadata(metadata, exp.output("reference_meta.json"))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, rt: Runtime) -> int:
    table = compare(read_u_series(args.run), read_reference(args.ref))
    if args.out:
        write_csv(table, args.out)
    else:
        table.to_csv(sys.stdout, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return EXIT_OK


@dataclass(frozen=True)
class _Distribution:
    report: RunReport
    index: int
    sample_set: WeightedSampleSet
    reference_states: np.ndarray


def _distribution(exp: Experiment, rt: Runtime, args: argparse.Namespace) -> _Distribution:
    c = exp.config
    index = _coarse_index(exp, getattr(args, "at_time", None))
    report = _solve(exp, rt, shift=c.run.shift and not args.no_shift)
    assert report.samples is not None and report.total_weights is not None
    sample_set = weighted_samples(report.samples, report.total_weights, index)
    states = simulate_states(
        c.model_spec(),
        c.reference_grid(),
        c.x0_vector(),
        c.reference.n_samples,
        c.reference_seed(),
        index,
        threads=rt.threads,
    )
    return _Distribution(report, index, sample_set, states)


def _distribution_metadata(
    exp: Experiment, command: str, outputs: list[Path], dist: _Distribution, **extra: object
) -> RunMetadata:
    c = exp.config
    return exp.metadata(
        command,
        outputs,
        bank_seed=derive_seed(c.run.seed, BANK_NAMESPACE),
        reference_seed=c.reference_seed(),
        tol=c.run.tol,
        max_iter=c.run.max_iter,
        iterations=dist.report.iterations,
        converged=dist.report.converged,
        stop_reason=dist.report.stop_reason,
        err_history=dist.report.err_history,
        bank_checksum=dist.report.bank_checksum,
        extra={"index": dist.index, "mean_weight": dist.sample_set.mean_weight(), **extra},
    )


def cmd_probmap(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    dist = _distribution(exp, rt, args)
    axes = args.axes if args.axes is not None else exp.config.observable.axes
    if max(axes) >= dist.reference_states.shape[1]:
        raise PreconditionError(f"--axes {axes} out of range for d={dist.reference_states.shape[1]}")
    if args.bounds is not None:
        bounds = args.bounds
    else:
        bounds = (
            *padded_bounds(dist.reference_states[:, axes[0]]),
            *padded_bounds(dist.reference_states[:, axes[1]]),
        )
    nx, ny = args.grid
    grid = CellGrid(axes=axes, bounds=bounds, nx=nx, ny=ny)
    cells = cell_probability_map(dist.sample_set, grid)
    ones = np.ones(dist.reference_states.shape[0])
    reference_cells = cell_probability_map(WeightedSampleSet(dist.reference_states, ones), grid)
    frame = cells.to_frame()
    frame["reference_mass"] = reference_cells.masses
    outputs = [write_csv(frame, exp.output("probmap.csv"))]
    logger.info("Probability map: in-grid mass %.6g, overflow %.6g", cells.total() - cells.overflow, cells.overflow)
    metadata = _distribution_metadata(
        exp,
        "probmap",
        outputs,
        dist,
        axes=list(axes),
        bounds=list(bounds),
        overflow=cells.overflow,
        mass_total=cells.total(),
        reference_overflow=reference_cells.overflow,
    )
    write_metadata(metadata, exp.output("probmap_meta.json"))
    return EXIT_OK


def cmd_histogram(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    if not 0 <= args.component < exp.config.model.d:
        raise PreconditionError(f"--component {args.component} out of range for d={exp.config.model.d}")
    dist = _distribution(exp, rt, args)
    frame = histogram_variants(args.component, dist.reference_states, dist.sample_set, args.bins)
    outputs = [write_csv(frame, exp.output("histogram.csv"))]
    metadata = _distribution_metadata(
        exp, "histogram", outputs, dist, component=args.component, bins=args.bins
    )
    write_metadata(metadata, exp.output("histogram_meta.json"))
    return EXIT_OK


def cmd_pca(args: argparse.Namespace, rt: Runtime) -> int:
    exp = Experiment.load(args.config)
    dist = _distribution(exp, rt, args)
    projection = pca_project(dist.reference_states)
    ones = np.ones(dist.reference_states.shape[0])
    frame = pca_frame(
        {
            "reference": (projection.coordinates, ones),
            "shifted": (projection.project(dist.sample_set.points), dist.sample_set.weights),
        }
    )
    outputs = [write_csv(frame, exp.output("pca.csv"))]
    metadata = _distribution_metadata(
        exp,
        "pca",
        outputs,
        dist,
        explained_ratio=projection.explained_ratio.tolist(),
    )
    write_metadata(metadata, exp.output("pca_meta.json"))
    return EXIT_OK


Handler = Callable[[argparse.Namespace, Runtime], int]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kolmogorov",
        description="Shifted-Gaussian iterated Kolmogorov solver for semilinear SDEs.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default: KOLMOGOROV_THREADS, 0 = one per CPU).",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: KOLMOGOROV_LOG_LEVEL or INFO).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    bank = sub.add_parser("bank", help="Create or describe a path bank file.")
    bank_sub = bank.add_subparsers(dest="bank_command", required=True)
    generate = bank_sub.add_parser("generate", help="Simulate and save base Gaussian paths.")
    generate.add_argument("--config", required=True)
    generate.add_argument("--out", required=True)
    generate.set_defaults(handler=cmd_bank_generate)
    inspect = bank_sub.add_parser("inspect", help="Print header fields and a payload checksum.")
    inspect.add_argument("file")
    inspect.set_defaults(handler=cmd_bank_inspect)

    solve = sub.add_parser(
        "solve",
        help="Run the iteration (defaults: N_s=10000, dt_coarse=1e-2, dt_fine=1e-3, "
        "tol=1e-2, max_iter=10).",
    )
    solve.add_argument("--config", required=True)
    solve.add_argument("--bank", default=None, help="Reuse a saved path bank.")
    solve.add_argument("--ref", default=None, help="Reference CSV to report absolute errors.")
    solve.add_argument("--no-shift", action="store_true", help="Use f = 0 instead of the ODE shift.")
    solve.add_argument("--movmean", type=int, default=None, metavar="W",
                       help="Add a centered moving mean of the final iterate.")
    solve.add_argument("--clip-weights", type=float, default=None, metavar="M",
                       help="Clip weights to [-M, M] instead of failing on overflow.")
    solve.set_defaults(handler=cmd_solve)

    reference = sub.add_parser(
        "reference",
        help="Euler-Maruyama reference (defaults: 20000 samples, dt_fine=1e-3).",
    )
    reference.add_argument("--config", required=True)
    reference.set_defaults(handler=cmd_reference)

    cmp = sub.add_parser("compare", help="Absolute error of every iterate against a reference.")
    cmp.add_argument("--run", required=True, help="u-series CSV written by solve.")
    cmp.add_argument("--ref", required=True, help="CSV written by reference.")
    cmp.add_argument("--out", default=None, help="Output CSV (default: stdout).")
    cmp.set_defaults(handler=cmd_compare)

    probmap = sub.add_parser("probmap", help="Weighted cell probabilities in a coordinate plane.")
    probmap.add_argument("--config", required=True)
    probmap.add_argument("--grid", type=_parse_pair, required=True, metavar="NX,NY")
    probmap.add_argument("--bounds", type=_parse_bounds, default=None,
                         metavar="X_LO,X_HI,Y_LO,Y_HI")
    probmap.add_argument("--axes", type=_parse_pair, default=None, metavar="P,Q")
    probmap.add_argument("--at-time", type=float, default=None, help="Default: T.")
    probmap.add_argument("--no-shift", action="store_true")
    probmap.set_defaults(handler=cmd_probmap)

    histogram = sub.add_parser("histogram", help="Reference, Gaussian and reweighted histograms.")
    histogram.add_argument("--config", required=True)
    histogram.add_argument("--component", type=int, required=True)
    histogram.add_argument("--at-time", type=float, default=None, help="Default: T.")
    histogram.add_argument("--bins", type=int, default=DEFAULT_BINS)
    histogram.add_argument("--no-shift", action="store_true")
    histogram.set_defaults(handler=cmd_histogram)

    pca = sub.add_parser("pca", help="Project reference and shifted samples on two principal axes.")
    pca.add_argument("--config", required=True)
    pca.add_argument("--at-time", type=float, default=None, help="Default: T.")
    pca.add_argument("--no-shift", action="store_true")
    pca.set_defaults(handler=cmd_pca)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = KolmogorovSettings()
    logging.basicConfig(
        level=args.log_level or settings.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    threads = resolve_threads(args.threads if args.threads is not None else settings.threads)
    handler: Handler = args.handler
    try:
        return handler(args, Runtime(settings, threads))
    except ConfigError as e:
        for message in e.errors:
            print(f"config error: {message}", file=sys.stderr)
        return e.exit_code
    except DivergenceError as e:
        logger.error("Run aborted: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except KolmogorovError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
