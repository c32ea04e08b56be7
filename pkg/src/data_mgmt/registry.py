"""Run directories and their artifacts.

Every bench run owns ``<runs_dir>/<timestamp>-<name>/`` holding:
- config.snapshot: the resolved bench config as flat YAML, enough to rerun
- results.csv / summary.csv: per-sample rows and per-cell aggregates
- plots/*.svg: one scatter per cell
- verify.txt: verification report, when requested
- anchor_cosine.csv: anchor-direction diagnostics of a verify run
"""

import re
from datetime import datetime
from pathlib import Path

import polars as pl
from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.config.models import BenchSpec
from src.config.settings import dump_snapshot
from src.core.file_manager import RunStorage

TIMESTAMP_FORMAT = "%Y%m%dT%H%M%S"
_RUN_DIR_PATTERN = re.compile(r"^(\d{8}T\d{6})-(.+)$")


class RunInfo(BaseModel):
    """Listing entry of one recorded run."""

    model_config = ConfigDict(frozen=True)

    name: str
    timestamp: str
    path: Path
    has_results: bool
    has_verify: bool


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "run"


class RunRegistry:
    """Reads and writes the artifacts of one run directory."""

    SNAPSHOT = "config.snapshot"
    RESULTS = "results.csv"
    SUMMARY = "summary.csv"
    PLOTS = "plots"
    VERIFY = "verify.txt"
    ANCHOR_COSINE = "anchor_cosine.csv"

    def __init__(self, run_dir: Path) -> None:
        """Open a run directory, creating it and its plots folder if needed.

        Args:
            run_dir: Directory holding the artifacts of one run
        """
        self.run_dir = Path(run_dir)
        self.storage = RunStorage(self.run_dir, subdirectories=[self.PLOTS])

    @classmethod
    def create(cls, runs_dir: Path, name: str, now: datetime | None = None) -> "RunRegistry":
        """Create a fresh, timestamped run directory.

        A numeric suffix keeps same-second runs apart.

        Args:
            runs_dir: Parent directory of all runs
            name: Run name; characters outside [A-Za-z0-9_.-] become underscores
            now: Timestamp to use instead of the current time

        Returns:
            Registry over the new directory
        """
        stamp = (now or datetime.now()).strftime(TIMESTAMP_FORMAT)
        base = Path(runs_dir) / f"{stamp}-{_safe_name(name)}"
        run_dir = base
        suffix = 1
        while run_dir.exists():
            run_dir = base.with_name(f"{base.name}.{suffix}")
            suffix += 1
        registry = cls(run_dir)
        logger.info(f"Run directory: {run_dir}")
        return registry

    @property
    def snapshot_path(self) -> Path:
        return self.run_dir / self.SNAPSHOT

    @property
    def results_path(self) -> Path:
        return self.run_dir / self.RESULTS

    @property
    def summary_path(self) -> Path:
        return self.run_dir / self.SUMMARY

    @property
    def plots_dir(self) -> Path:
        return self.run_dir / self.PLOTS

    @property
    def verify_path(self) -> Path:
        return self.run_dir / self.VERIFY

    def write_snapshot(self, spec: BenchSpec) -> Path:
        """Write the resolved config as a flat YAML snapshot.

        Args:
            spec: Fully resolved bench config

        Returns:
            Path of config.snapshot
        """
        return self.storage.write_text(dump_snapshot(spec), self.SNAPSHOT)

    def write_results(self, results: pl.DataFrame) -> Path:
        """Write the per-sample result rows.

        Args:
            results: One row per (cell, sample)

        Returns:
            Path of results.csv
        """
        return self.storage.write_csv(results, self.RESULTS)

    def write_summary(self, summary: pl.DataFrame) -> Path:
        return self.storage.write_csv(summary, self.SUMMARY)

    def write_verify(self, report: str) -> Path:
        """Write a rendered verification report.

        Args:
            report: Text of a rendered ``VerifyReport``

        Returns:
            Path of verify.txt
        """
        return self.storage.write_text(report, self.VERIFY)

    def write_anchor_cosine(self, table: pl.DataFrame) -> Path:
        """Write the per-step anchor cosine diagnostics.

        Args:
            table: Rows of ``anchor_cosine_table``

        Returns:
            Path of anchor_cosine.csv
        """
        return self.storage.write_csv(table, self.ANCHOR_COSINE)

    def read_results(self) -> pl.DataFrame:
        """Read results.csv back; NaN cells come back as nulls.

        Returns:
            The per-sample rows

        Raises:
            FileNotFoundError: If the run has no results yet
        """
        return self.storage.read_csv(self.RESULTS)

    def read_summary(self) -> pl.DataFrame:
        return self.storage.read_csv(self.SUMMARY)


def list_runs(runs_dir: Path) -> list[RunInfo]:
    """List recorded runs, newest first.

    Directories whose names do not match ``<timestamp>-<name>`` are skipped.

    Args:
        runs_dir: Parent directory of all runs

    Returns:
        One entry per run; empty when ``runs_dir`` does not exist
    """
    runs_dir = Path(runs_dir)
    if not runs_dir.exists():
        return []
    runs = []
    for path in runs_dir.iterdir():
        match = _RUN_DIR_PATTERN.match(path.name)
        if not path.is_dir() or match is None:
            continue
        runs.append(
            RunInfo(
                name=match.group(2),
                timestamp=match.group(1),
                path=path,
                has_results=(path / RunRegistry.RESULTS).exists(),
                has_verify=(path / RunRegistry.VERIFY).exists(),
            )
        )
    runs.sort(key=lambda r: (r.timestamp, r.path.name), reverse=True)
    logger.debug(f"Found {len(runs)} runs in {runs_dir}")
    return runs
