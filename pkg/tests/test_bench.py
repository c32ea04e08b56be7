"""Bench pipeline: results layout, determinism, failures and plots."""

from pathlib import Path

import numpy as np
import polars as pl
from loguru import logger

from src.analysis.metrics import summarize_results
from src.bench.pipeline import (
    RESULTS_COLUMNS,
    BenchPipeline,
    reference_batch,
    render_results_plots,
    run_bench,
    source_batch,
)
from src.config.models import BenchSpec
from src.config.settings import load_config, load_task_file
from src.core.config import settings
from src.core.domain_models import EditMethod
from src.data_mgmt.registry import RunRegistry
from src.flow.fields import VelocityField

HEADER = (
    "method,n_max,s_tar,n_avg,seed,sample_idx,src_0,src_1,edit_0,edit_1,"
    "identity_err,assign_ok,target_loglik,source_loglik,cancel_ratio,runtime_us"
)


def test_results_layout(tmp_path: Path, small_spec: BenchSpec) -> None:
    registry = run_bench(small_spec, runs_dir=tmp_path)
    lines = registry.results_path.read_text().splitlines()
    assert lines[0] == HEADER
    assert lines[0].split(",") == RESULTS_COLUMNS
    assert len(lines) == 1 + 4 * small_spec.samples

    results = registry.read_results()
    assert results["method"].unique(maintain_order=True).to_list() == [
        "direct", "inversion", "flowedit", "anchorflow"
    ]
    assert results["sample_idx"].to_list()[:3] == [0, 1, 2]
    assert (results["runtime_us"] == 0).all()
    assert registry.snapshot_path.exists()
    assert len(list(registry.plots_dir.glob("*.svg"))) == 4
    assert (registry.plots_dir / "anchorflow_nmax8_star7.5_navg1.svg").exists()


def test_sources_are_shared_across_methods(tmp_path: Path, small_spec: BenchSpec) -> None:
    results = run_bench(small_spec, runs_dir=tmp_path).read_results()
    sources = source_batch(small_spec)
    for method in ("inversion", "anchorflow"):
        cell = results.filter(pl.col("method") == method)
        assert np.allclose(cell.select("src_0", "src_1").to_numpy(), sources, rtol=1e-15)


def test_summary_matches_results(tmp_path: Path, small_spec: BenchSpec) -> None:
    registry = run_bench(small_spec, runs_dir=tmp_path)
    summary = registry.read_summary()
    recomputed = summarize_results(registry.read_results())
    assert summary["method"].to_list() == recomputed["method"].to_list()
    for column in ("mean_identity_err", "mean_target_loglik", "mean_cancel_ratio"):
        assert np.allclose(summary[column].to_numpy(), recomputed[column].to_numpy(), rtol=1e-9)
    assert (summary["energy_distance"] >= 0.0).all()


def test_output_independent_of_threads(tmp_path: Path, small_spec: BenchSpec) -> None:
    single = run_bench(small_spec, runs_dir=tmp_path / "a", threads=1)
    multi = run_bench(small_spec, runs_dir=tmp_path / "b", threads=4)
    assert single.results_path.read_bytes() == multi.results_path.read_bytes()
    assert single.summary_path.read_bytes() == multi.summary_path.read_bytes()
    for svg in single.plots_dir.glob("*.svg"):
        assert svg.read_bytes() == (multi.plots_dir / svg.name).read_bytes()


def test_rerun_from_snapshot(tmp_path: Path, small_spec: BenchSpec) -> None:
    first = run_bench(small_spec, runs_dir=tmp_path / "a")
    rerun = run_bench(load_config(first.snapshot_path), runs_dir=tmp_path / "b")
    assert first.results_path.read_bytes() == rerun.results_path.read_bytes()


def test_numeric_failure_ends_cell(
    tmp_path: Path, small_spec: BenchSpec, nan_field: VelocityField
) -> None:
    registry = RunRegistry(tmp_path / "failing")
    BenchPipeline(small_spec, registry, field=nan_field).run()
    results = registry.read_results()
    logger.info(f"failing bench wrote {len(results)} rows")
    assert len(results) == 4
    assert results["identity_err"].null_count() == 4
    assert registry.results_path.read_text().splitlines()[1].endswith(",nan,nan,nan,nan,nan,nan,0")
    summary = registry.read_summary()
    assert summary["n_failed"].to_list() == [1, 1, 1, 1]


def test_three_dimensional_task_skips_plots(tmp_path: Path) -> None:
    task = load_task_file(settings.config_dir / "tasks" / "three_mode_3d.yaml")
    spec = BenchSpec(
        task=task,
        methods=(EditMethod.ANCHORFLOW,),
        T=8,
        n_max=6,
        samples=5,
        reference_samples=20,
    )
    registry = run_bench(spec, runs_dir=tmp_path)
    assert len(registry.read_results()) == 5
    assert list(registry.plots_dir.glob("*.svg")) == []


def test_plots_rerender_from_results(tmp_path: Path, small_spec: BenchSpec) -> None:
    registry = run_bench(small_spec, runs_dir=tmp_path)
    written = render_results_plots(
        registry.read_results(), tmp_path / "replot", reference_batch(small_spec)
    )
    assert len(written) == 4
    for path in written:
        assert path.read_bytes() == (registry.plots_dir / path.name).read_bytes()
