"""anchorflow-bench - Main Entry Point with CLI Commands.

Supports:
- sample: Draw latents from a task mixture to CSV
- edit: Run one editing method on one source latent
- bench: Run a full bench spec into a new run directory
- verify: Run the verification suite
- plot: Re-render scatter SVGs from a results.csv
- train: Train an MLP velocity field and write a checkpoint
- runs: List recorded runs

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 verification failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import polars as pl
from loguru import logger
from pydantic import ValidationError
from tabulate import tabulate

from src.bench.pipeline import (
    SOURCE_STREAM,
    build_field,
    reference_batch,
    render_results_plots,
    run_bench,
)
from src.bench.verify import Fault, run_verify
from src.config.models import MAX_SEED, BenchSpec, EditConfig, TrainConfig
from src.config.settings import bench_spec_from_dict, load_config
from src.core.config import settings
from src.core.domain_models import Condition, EditMethod, EditResult
from src.core.errors import ConfigError, NumericFailureError, VerificationError
from src.core.file_manager import RunStorage
from src.core.rng import RngStream
from src.data_mgmt.registry import RunRegistry, list_runs
from src.editing.samplers import EditEngine
from src.flow.gmm_oracle import sample_mixture, sample_mixture_batch
from src.flow.learned_field import save_checkpoint, train_field

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4


def _u64(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return seed


def _configure_logging() -> None:
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level.upper())


def _load_spec(args: argparse.Namespace) -> BenchSpec:
    """Spec from --config (or the bundled default), with --seed applied."""
    if args.config:
        spec = load_config(Path(args.config))
    elif settings.default_config_path.exists():
        spec = load_config(settings.default_config_path)
    else:
        spec = bench_spec_from_dict({})
    if getattr(args, "seed", None) is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    return spec


def _trajectory_frame(result: EditResult) -> pl.DataFrame:
    d = result.edited.size
    rows: dict[str, list[float | int]] = {"step_idx": [], "t": [], "delta": []}
    for prefix in ("x", "update", "direction"):
        for j in range(d):
            rows[f"{prefix}_{j}"] = []
    for step in result.trajectory:
        rows["step_idx"].append(step.step_idx)
        rows["t"].append(step.t)
        rows["delta"].append(step.delta)
        columns = {"x": step.x_fe, "update": step.update, "direction": step.direction}
        for prefix, values in columns.items():
            for j in range(d):
                rows[f"{prefix}_{j}"].append(float(values[j]))
    return pl.DataFrame(rows)


def cmd_sample(args: argparse.Namespace) -> None:
    """Draw latents from the source, target or unconditional mixture."""
    spec = _load_spec(args)
    cond = Condition(args.which)
    gmm = spec.task.mixture(cond)
    points = sample_mixture_batch(gmm, RngStream(seed=spec.seed).child(3), args.n)
    df = pl.DataFrame({f"x_{j}": points[:, j] for j in range(gmm.dim)})
    out_dir = Path(args.out) if args.out else Path(".")
    path = RunStorage(out_dir).write_csv(df, f"samples_{cond}.csv")
    logger.success(f"Wrote {args.n} {cond} samples to {path}")


def cmd_edit(args: argparse.Namespace) -> None:
    """Edit one source latent with a single method and config."""
    spec = _load_spec(args)
    method = EditMethod(args.method)
    point = spec.grid_points()[0]
    cfg: EditConfig = spec.edit_config(method, point)
    if args.fixed_anchor:
        cfg = EditConfig(**{**cfg.model_dump(), "fixed_anchor": True})

    if args.x_src:
        x_src = np.array([float(v) for v in args.x_src.split(",")])
    else:
        stream = RngStream(seed=spec.seed).child(SOURCE_STREAM, args.sample_idx)
        x_src = sample_mixture(spec.task.source, stream)
    engine = EditEngine(build_field(spec), spec.task)
    result = engine.run(cfg, x_src, args.sample_idx)

    table = [
        ["method", str(method)],
        ["x_src", np.array2string(x_src, precision=6)],
        ["edited", np.array2string(result.edited, precision=6)],
        ["steps", len(result.trajectory)],
        ["identity gap", f"{result.identity_gap():.6f}"],
    ]
    print(tabulate(table, tablefmt="simple"))
    if args.out:
        path = RunStorage(Path(args.out)).write_csv(_trajectory_frame(result), "trajectory.csv")
        logger.success(f"Trajectory written to {path}")


def cmd_bench(args: argparse.Namespace) -> None:
    """Run every method and grid point of a bench spec."""
    logger.info("=== Running Bench ===")
    spec = _load_spec(args)
    threads = args.threads or settings.threads
    runs_dir = Path(args.out) if args.out else None
    registry = run_bench(spec, runs_dir=runs_dir, threads=threads, progress=True)

    summary = registry.read_summary()
    print(tabulate(summary.rows(), headers=summary.columns, floatfmt=".4f"))
    logger.success(f"Run written to {registry.run_dir}")

    if args.verify:
        report = run_verify(out_dir=registry.run_dir, progress=True)
        report.raise_for_failure()


def cmd_verify(args: argparse.Namespace) -> None:
    """Run the verification suite and write verify.txt."""
    logger.info("=== Running Verification ===")
    fault = Fault(args.fault) if args.fault else None
    if args.out:
        out_dir = Path(args.out)
    else:
        out_dir = RunRegistry.create(settings.runs_dir, "verify").run_dir
    report = run_verify(
        fault=fault,
        claims=args.claims,
        out_dir=out_dir,
        diagnostics=args.diagnostics,
        progress=True,
    )
    print(report.render(), end="")
    report.raise_for_failure()


def cmd_plot(args: argparse.Namespace) -> None:
    """Re-render per-cell scatter plots from a results.csv or run directory."""
    source = Path(args.results)
    run_dir = source if source.is_dir() else source.parent
    registry = RunRegistry(run_dir)
    if source.is_dir():
        results = registry.read_results()
    else:
        results = pl.read_csv(source, null_values=["nan"])
    reference = None
    if registry.snapshot_path.exists():
        reference = reference_batch(load_config(registry.snapshot_path))
    else:
        logger.warning(f"No {RunRegistry.SNAPSHOT} next to the results; plotting without target")
    out_dir = Path(args.out) if args.out else registry.plots_dir
    render_results_plots(results, out_dir, reference)


def cmd_train(args: argparse.Namespace) -> None:
    """Train an MLP field on the configured task and save a checkpoint."""
    spec = _load_spec(args)
    train_cfg = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        hidden_width=args.hidden_width,
        seed=args.seed if args.seed is not None else spec.seed,
    )
    trace: list[float] = []
    mlp = train_field(spec.task, train_cfg, loss_trace=trace, progress=True)
    out = Path(args.out) if args.out else Path("field.ckpt")
    save_checkpoint(mlp, out)
    if trace:
        tail = trace[-min(500, len(trace)) :]
        logger.info(f"Final mean loss over {len(tail)} steps: {float(np.mean(tail)):.5f}")


def cmd_runs(args: argparse.Namespace) -> None:
    """List recorded runs, newest first."""
    runs_dir = Path(args.out) if args.out else settings.runs_dir
    runs = list_runs(runs_dir)
    if not runs:
        logger.info(f"No runs found in {runs_dir}")
        return
    table = [[r.timestamp, r.name, r.has_results, r.has_verify, str(r.path)] for r in runs]
    print(tabulate(table, headers=["timestamp", "name", "results", "verify", "path"]))


def _add_common(parser: argparse.ArgumentParser, seed: bool = True) -> None:
    parser.add_argument(
        "--config", type=str, help="Bench config YAML (default: config/config.yaml)"
    )
    parser.add_argument("--out", type=str, help="Output directory")
    if seed:
        parser.add_argument("--seed", type=_u64, help="Override the config seed (u64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afb",
        description="anchorflow-bench - editing samplers on exact mixture flows",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True, help="Available commands")

    # Sample command
    parser_sample = subparsers.add_parser("sample", help="Draw latents from a task mixture")
    _add_common(parser_sample)
    parser_sample.add_argument("-n", type=int, default=1000, help="Number of samples")
    parser_sample.add_argument(
        "--which", choices=[c.value for c in Condition], default="src", help="Mixture to draw from"
    )
    parser_sample.set_defaults(func=cmd_sample)

    # Edit command
    parser_edit = subparsers.add_parser("edit", help="Run one method on one source latent")
    _add_common(parser_edit)
    parser_edit.add_argument(
        "--method", choices=[m.value for m in EditMethod], default=EditMethod.ANCHORFLOW.value
    )
    parser_edit.add_argument("--sample-idx", type=int, default=0, help="Sample index (noise key)")
    parser_edit.add_argument("--x-src", type=str, help="Source latent, e.g. --x-src=-3,1")
    parser_edit.add_argument(
        "--fixed-anchor", action="store_true", help="Reuse the first active step's noise"
    )
    parser_edit.set_defaults(func=cmd_edit)

    # Bench command
    parser_bench = subparsers.add_parser("bench", help="Run a full bench spec")
    _add_common(parser_bench)
    parser_bench.add_argument(
        "--threads", type=int, help="Worker threads (does not change output bytes)"
    )
    parser_bench.add_argument("--verify", action="store_true", help="Also write verify.txt")
    parser_bench.set_defaults(func=cmd_bench)

    # Verify command
    parser_verify = subparsers.add_parser("verify", help="Run the verification suite")
    parser_verify.add_argument("--out", type=str, help="Directory for verify.txt")
    parser_verify.add_argument(
        "--fault", choices=[f.value for f in Fault], help="Inject a seeded fault"
    )
    parser_verify.add_argument(
        "--claims", action="store_true", help="Also run the directional method comparisons"
    )
    parser_verify.add_argument(
        "--diagnostics", action="store_true", help="Write anchor_cosine.csv"
    )
    parser_verify.set_defaults(func=cmd_verify)

    # Plot command
    parser_plot = subparsers.add_parser("plot", help="Re-render SVGs from a results.csv")
    parser_plot.add_argument("results", type=str, help="results.csv or a run directory")
    parser_plot.add_argument("--out", type=str, help="Directory for the SVGs")
    parser_plot.set_defaults(func=cmd_plot)

    # Train command
    parser_train = subparsers.add_parser("train", help="Train an MLP velocity field")
    _add_common(parser_train)
    parser_train.add_argument("--steps", type=int, default=20_000)
    parser_train.add_argument("--batch-size", type=int, default=256)
    parser_train.add_argument("--learning-rate", type=float, default=1e-3)
    parser_train.add_argument("--hidden-width", type=int, default=64)
    parser_train.set_defaults(func=cmd_train)

    # Runs command
    parser_runs = subparsers.add_parser("runs", help="List recorded runs")
    parser_runs.add_argument("--out", type=str, help="Runs directory (default: runs)")
    parser_runs.set_defaults(func=cmd_runs)

    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point with CLI argument parsing."""
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericFailureError as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except VerificationError as e:
        logger.error(str(e))
        return EXIT_VERIFY
    return 0


if __name__ == "__main__":
    sys.exit(main())
