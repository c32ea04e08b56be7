"""Bench orchestration: methods x grid points x samples.

Source latents and the target reference batch are drawn from streams derived
from the bench seed, so every method and grid point edits the same sources.
Samples of a cell may run on several threads; rows are always written in
(method, grid point, sample) order.
"""

from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm
from tqdm.contrib.concurrent import thread_map

from src.analysis.metrics import GROUP_KEYS, MetricsEngine, energy_distance, summarize_results
from src.bench.colors import METHOD_COLORS
from src.bench.plots import BatchStyle, LabeledBatch, render_scatter_svg
from src.config.models import BenchSpec, EditConfig, GridPoint
from src.core.config import settings
from src.core.domain_models import EditMethod, FloatArray, Latent
from src.core.errors import NumericFailureError
from src.core.rng import RngStream
from src.data_mgmt.registry import RunRegistry
from src.editing.samplers import EditEngine
from src.flow.fields import VelocityField
from src.flow.gmm_oracle import GmmOracleField, sample_mixture_batch
from src.flow.learned_field import MlpVelocityField, load_checkpoint

# Child streams of the bench seed
SOURCE_STREAM = 1
REFERENCE_STREAM = 2

RESULTS_SCHEMA: dict[str, Any] = {
    "method": pl.String,
    "n_max": pl.Int64,
    "s_tar": pl.Float64,
    "n_avg": pl.Int64,
    "seed": pl.UInt64,
    "sample_idx": pl.Int64,
    "src_0": pl.Float64,
    "src_1": pl.Float64,
    "edit_0": pl.Float64,
    "edit_1": pl.Float64,
    "identity_err": pl.Float64,
    "assign_ok": pl.Boolean,
    "target_loglik": pl.Float64,
    "source_loglik": pl.Float64,
    "cancel_ratio": pl.Float64,
    "runtime_us": pl.Int64,
}
RESULTS_COLUMNS = list(RESULTS_SCHEMA)

NAN = float("nan")


class SampleOutcome(BaseModel):
    """One results row plus the full edited latent (None on failure)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    row: dict[str, Any]
    edited: FloatArray | None = None

    @property
    def failed(self) -> bool:
        return self.edited is None


def _coords(x: Latent | None, prefix: str) -> dict[str, float]:
    """First two coordinates; NaN where the latent is shorter or missing."""
    return {
        f"{prefix}_{j}": float(x[j]) if x is not None and x.size > j else NAN for j in range(2)
    }


def source_batch(spec: BenchSpec) -> NDArray[np.float64]:
    return sample_mixture_batch(
        spec.task.source, RngStream(seed=spec.seed).child(SOURCE_STREAM), spec.samples
    )


def reference_batch(spec: BenchSpec) -> NDArray[np.float64]:
    return sample_mixture_batch(
        spec.task.target,
        RngStream(seed=spec.seed).child(REFERENCE_STREAM),
        spec.reference_samples,
    )


def build_field(spec: BenchSpec) -> VelocityField:
    """The exact mixture field, or a learned field from a checkpoint."""
    if spec.uses_oracle:
        return GmmOracleField(spec.task)
    mlp = load_checkpoint(Path(spec.field))
    logger.info(f"Using learned field from {spec.field}")
    return MlpVelocityField(mlp)


def cell_plot_name(method: str, point: GridPoint) -> str:
    return f"{method}_nmax{point.n_max}_star{point.s_tar:g}_navg{point.n_avg}.svg"


def _cell_title(method: str, point: GridPoint) -> str:
    return f"{method}  n_max={point.n_max}  s_tar={point.s_tar:g}  n_avg={point.n_avg}"


def _cell_batches(
    method: str,
    sources: NDArray[np.float64],
    edited: NDArray[np.float64],
    reference: NDArray[np.float64] | None,
) -> list[LabeledBatch]:
    batches = [
        LabeledBatch(label="source", points=sources, style=BatchStyle.SOURCE),
        LabeledBatch(label=method, points=edited, color=METHOD_COLORS.get(EditMethod(method))),
    ]
    if reference is not None:
        batches.append(LabeledBatch(label="target", points=reference, style=BatchStyle.TARGET))
    return batches


class BenchPipeline:
    """Runs every cell of a bench spec and writes the run artifacts."""

    def __init__(
        self,
        spec: BenchSpec,
        registry: RunRegistry,
        field: VelocityField | None = None,
        threads: int = 1,
        progress: bool = False,
    ) -> None:
        self.spec = spec
        self.registry = registry
        self.field = field if field is not None else build_field(spec)
        self.engine = EditEngine(self.field, spec.task)
        self.metrics = MetricsEngine(spec.task)
        self.threads = max(1, threads)
        self.progress = progress
        logger.info(f"BenchPipeline initialized ({self.threads} threads)")

    def run_sample(self, cfg: EditConfig, x_src: Latent, sample_idx: int) -> SampleOutcome:
        row: dict[str, Any] = {
            "method": str(cfg.method),
            "n_max": cfg.n_max,
            "s_tar": cfg.s_tar,
            "n_avg": cfg.n_avg,
            "seed": cfg.seed,
            "sample_idx": sample_idx,
            **_coords(x_src, "src"),
        }
        try:
            result = self.engine.run(cfg, x_src, sample_idx)
            scores = self.metrics.score(x_src, result.edited, result.trajectory)
        except NumericFailureError as e:
            logger.error(f"{cfg.method} sample {sample_idx} failed: {e}")
            row.update(
                {
                    **_coords(None, "edit"),
                    "identity_err": NAN,
                    "assign_ok": None,
                    "target_loglik": NAN,
                    "source_loglik": NAN,
                    "cancel_ratio": NAN,
                    "runtime_us": 0,
                }
            )
            return SampleOutcome(row=row)

        row.update(
            {
                **_coords(result.edited, "edit"),
                "identity_err": scores.identity_error,
                "assign_ok": scores.assignment_consistent,
                "target_loglik": scores.target_loglik,
                "source_loglik": scores.source_loglik,
                "cancel_ratio": scores.cancel_ratio,
                "runtime_us": int(round(result.wall_time_s * 1e6)) if self.spec.timing else 0,
            }
        )
        return SampleOutcome(row=row, edited=result.edited)

    def run_cell(
        self, method: EditMethod, point: GridPoint, sources: NDArray[np.float64]
    ) -> list[SampleOutcome]:
        """Outcomes of one cell; a numeric failure ends the cell at the failing sample."""
        cfg = self.spec.edit_config(method, point)
        outcomes: list[SampleOutcome] = thread_map(
            lambda i: self.run_sample(cfg, sources[i], i),
            range(sources.shape[0]),
            max_workers=self.threads,
            desc=_cell_title(str(method), point),
            disable=not self.progress,
            leave=False,
        )
        for idx, outcome in enumerate(outcomes):
            if outcome.failed:
                logger.warning(f"Cell {_cell_title(str(method), point)} aborted at sample {idx}")
                return outcomes[: idx + 1]
        return outcomes

    def run(self) -> RunRegistry:
        spec = self.spec
        self.registry.write_snapshot(spec)
        sources = source_batch(spec)
        reference = reference_batch(spec)
        points = spec.grid_points()
        logger.info(
            f"Bench '{spec.name}': {len(spec.methods)} methods x {len(points)} grid points "
            f"x {spec.samples} samples"
        )

        rows: list[dict[str, Any]] = []
        energies: list[float] = []
        cells = [(method, point) for method in spec.methods for point in points]
        for method, point in tqdm(cells, desc="cells", disable=not self.progress):
            outcomes = self.run_cell(method, point, sources)
            rows.extend(o.row for o in outcomes)
            edited = _stack_edited(outcomes, spec.task.dim)
            energies.append(energy_distance(edited, reference) if edited.shape[0] else NAN)
            if spec.plots:
                self._plot_cell(str(method), point, sources, edited, reference)

        results = pl.DataFrame(rows, schema=RESULTS_SCHEMA)
        summary = summarize_results(results).with_columns(
            pl.Series("energy_distance", energies, dtype=pl.Float64)
        )
        self.registry.write_results(results)
        self.registry.write_summary(summary)
        logger.success(f"Bench finished: {len(results)} rows, {len(summary)} cells")
        return self.registry

    def _plot_cell(
        self,
        method: str,
        point: GridPoint,
        sources: NDArray[np.float64],
        edited: NDArray[np.float64],
        reference: NDArray[np.float64],
    ) -> None:
        if self.spec.task.dim != 2:
            logger.warning(f"Skipping scatter for {method}: task dimension is {self.spec.task.dim}")
            return
        render_scatter_svg(
            _cell_batches(method, sources, edited, reference),
            self.registry.plots_dir / cell_plot_name(method, point),
            _cell_title(method, point),
        )


def _stack_edited(outcomes: list[SampleOutcome], dim: int) -> NDArray[np.float64]:
    edited = [o.edited for o in outcomes if o.edited is not None]
    if not edited:
        return np.zeros((0, dim))
    return np.stack(edited)


def render_results_plots(
    results: pl.DataFrame, plots_dir: Path, reference: NDArray[np.float64] | None = None
) -> list[Path]:
    """Re-render one scatter per cell from a results table of a 2-D task."""
    written = []
    for keys, cell in results.group_by(GROUP_KEYS, maintain_order=True):
        method, n_max, s_tar, n_avg = keys
        point = GridPoint(n_max=int(n_max), s_tar=float(s_tar), n_avg=int(n_avg))
        ok = cell.filter(pl.col("identity_err").is_not_nan().fill_null(False))
        batches = _cell_batches(
            str(method),
            cell.select("src_0", "src_1").to_numpy(),
            ok.select("edit_0", "edit_1").to_numpy(),
            reference,
        )
        path = Path(plots_dir) / cell_plot_name(str(method), point)
        written.append(render_scatter_svg(batches, path, _cell_title(str(method), point)))
    logger.info(f"Rendered {len(written)} plots into {plots_dir}")
    return written


def run_bench(
    spec: BenchSpec,
    runs_dir: Path | None = None,
    threads: int = 1,
    progress: bool = False,
) -> RunRegistry:
    """Run a full bench into a fresh run directory."""
    parent = runs_dir or spec.output_dir or settings.runs_dir
    registry = RunRegistry.create(parent, spec.name)
    return BenchPipeline(spec, registry, threads=threads, progress=progress).run()
