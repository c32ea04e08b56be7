"""Editing quality metrics.

Identity preservation is measured against a paired oracle point: the source
latent is assigned to its most responsible source component and translated
onto the paired target component. Semantic modification is the target
log-density of the edit. Trajectory cancellation is the ratio of net to total
update length.
"""

from collections.abc import Sequence

import numpy as np
import polars as pl
from loguru import logger
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict
from scipy.spatial.distance import cdist

from src.core.domain_models import EditTask, FloatArray, Latent, TrajectoryStep, check_dim
from src.flow.gmm_oracle import mixture_logpdf, responsibilities

AMBIGUITY_GAP = 1e-9
_ENERGY_BLOCK = 2048

GROUP_KEYS = ["method", "n_max", "s_tar", "n_avg"]


class PairedPoint(BaseModel):
    """Oracle edit of one source latent."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    point: FloatArray
    source_component: int
    target_component: int
    ambiguous: bool


class SampleMetrics(BaseModel):
    """Scores of one edited sample."""

    model_config = ConfigDict(frozen=True)

    identity_error: float
    assignment_consistent: bool
    target_loglik: float
    source_loglik: float
    cancel_ratio: float


def _top_component(gamma: NDArray[np.float64]) -> tuple[int, bool]:
    order = np.argsort(-gamma, kind="stable")
    k = int(order[0])
    ambiguous = gamma.size > 1 and float(gamma[order[0]] - gamma[order[1]]) < AMBIGUITY_GAP
    return k, ambiguous


class MetricsEngine:
    """Scores edits against one task."""

    def __init__(self, task: EditTask) -> None:
        self.task = task

    def paired_oracle_point(self, x_src: Latent) -> PairedPoint:
        """x_src translated from its source component onto the paired target component."""
        x_src = np.asarray(x_src, dtype=np.float64)
        check_dim(x_src, self.task.dim, "x_src")
        k, ambiguous = _top_component(responsibilities(self.task.source, x_src, 0.0))
        if ambiguous:
            logger.warning(f"ambiguous component assignment for source point {x_src}")
        k_tar = self.task.pairing[k]
        offset = self.task.target.means[k_tar] - self.task.source.means[k]
        return PairedPoint(
            point=x_src + offset,
            source_component=k,
            target_component=k_tar,
            ambiguous=ambiguous,
        )

    def identity_error(self, x_src: Latent, x_edit: Latent) -> tuple[float, bool]:
        """Distance to the paired oracle point and whether the edit landed in the paired mode."""
        paired = self.paired_oracle_point(x_src)
        x_edit = np.asarray(x_edit, dtype=np.float64)
        check_dim(x_edit, self.task.dim, "x_edit")
        k_edit, _ = _top_component(responsibilities(self.task.target, x_edit, 0.0))
        error = float(np.linalg.norm(x_edit - paired.point))
        return error, k_edit == paired.target_component

    def semantic_score(self, x_edit: Latent) -> float:
        return float(mixture_logpdf(self.task.target, x_edit))

    def source_score(self, x_edit: Latent) -> float:
        return float(mixture_logpdf(self.task.source, x_edit))

    def score(
        self, x_src: Latent, x_edit: Latent, trajectory: Sequence[TrajectoryStep]
    ) -> SampleMetrics:
        error, consistent = self.identity_error(x_src, x_edit)
        ratio = cancellation_ratio(trajectory) if len(trajectory) >= 2 else float("nan")
        return SampleMetrics(
            identity_error=error,
            assignment_consistent=consistent,
            target_loglik=self.semantic_score(x_edit),
            source_loglik=self.source_score(x_edit),
            cancel_ratio=ratio,
        )


def paired_oracle_point(task: EditTask, x_src: Latent) -> Latent:
    return MetricsEngine(task).paired_oracle_point(x_src).point


def identity_error(task: EditTask, x_src: Latent, x_edit: Latent) -> tuple[float, bool]:
    return MetricsEngine(task).identity_error(x_src, x_edit)


def semantic_score(task: EditTask, x_edit: Latent) -> float:
    return MetricsEngine(task).semantic_score(x_edit)


def _mean_pairwise_distance(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    total = 0.0
    for start in range(0, a.shape[0], _ENERGY_BLOCK):
        total += float(cdist(a[start : start + _ENERGY_BLOCK], b).sum())
    return total / (a.shape[0] * b.shape[0])


def energy_distance(batch_a: NDArray[np.float64], batch_b: NDArray[np.float64]) -> float:
    """2 E||a - b|| - E||a - a'|| - E||b - b'|| over all pairs, blocked by rows."""
    a = np.atleast_2d(np.asarray(batch_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(batch_b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("energy distance needs two non-empty batches")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"batch dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    value = (
        2.0 * _mean_pairwise_distance(a, b)
        - _mean_pairwise_distance(a, a)
        - _mean_pairwise_distance(b, b)
    )
    return max(value, 0.0)


def cancellation_ratio(trajectory: Sequence[TrajectoryStep] | NDArray[np.float64]) -> float:
    """||sum_t u_t|| / sum_t ||u_t|| over the applied updates; 1 when all are zero."""
    if isinstance(trajectory, np.ndarray):
        updates = np.atleast_2d(trajectory)
    else:
        updates = np.array([step.update for step in trajectory])
    if updates.shape[0] < 2:
        raise ValueError(f"cancellation ratio needs at least 2 steps, got {updates.shape[0]}")
    total = float(np.sum(np.linalg.norm(updates, axis=1)))
    if total == 0.0:
        return 1.0
    return float(np.linalg.norm(updates.sum(axis=0))) / total


def aggregate_exprs() -> list[pl.Expr]:
    """Per-group aggregates; failed rows (NaN identity error) are counted, not averaged."""
    # NaN in memory, null after a CSV round trip
    ok = pl.col("identity_err").is_not_nan().fill_null(False)
    has_ratio = pl.col("cancel_ratio").is_not_nan().fill_null(False)
    return [
        pl.len().alias("n_samples"),
        (~ok).sum().alias("n_failed"),
        pl.col("identity_err").filter(ok).mean().alias("mean_identity_err"),
        pl.col("assign_ok").filter(ok).cast(pl.Float64).mean().alias("assign_rate"),
        pl.col("target_loglik").filter(ok).mean().alias("mean_target_loglik"),
        pl.col("source_loglik").filter(ok).mean().alias("mean_source_loglik"),
        pl.col("cancel_ratio").filter(has_ratio).mean().alias("mean_cancel_ratio"),
    ]


def summarize_results(results: pl.DataFrame) -> pl.DataFrame:
    """One row per (method, n_max, s_tar, n_avg) cell, in first-seen order."""
    return results.group_by(GROUP_KEYS, maintain_order=True).agg(aggregate_exprs())


class MetricsReport(BaseModel):
    """Per-sample metric rows plus batch aggregates."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rows: pl.DataFrame
    energy_distance: float | None = None

    @classmethod
    def from_samples(
        cls, samples: Sequence[SampleMetrics], energy: float | None = None
    ) -> "MetricsReport":
        rows = pl.DataFrame(
            {
                "identity_err": [s.identity_error for s in samples],
                "assign_ok": [s.assignment_consistent for s in samples],
                "target_loglik": [s.target_loglik for s in samples],
                "source_loglik": [s.source_loglik for s in samples],
                "cancel_ratio": [s.cancel_ratio for s in samples],
            },
            schema={
                "identity_err": pl.Float64,
                "assign_ok": pl.Boolean,
                "target_loglik": pl.Float64,
                "source_loglik": pl.Float64,
                "cancel_ratio": pl.Float64,
            },
        )
        return cls(rows=rows, energy_distance=energy)

    def aggregates(self) -> dict[str, float]:
        """Means over rows, the assignment rate and the energy distance."""
        agg = self.rows.select(aggregate_exprs()).row(0, named=True)
        out = {k: float(v) if v is not None else float("nan") for k, v in agg.items()}
        out["energy_distance"] = (
            float("nan") if self.energy_distance is None else self.energy_distance
        )
        return out
