"""Standalone SVG scatter plots of source, edited and target batches.

Output is byte-stable for fixed input: the SVG hash salt is pinned, the date
metadata is dropped and text stays as <text> elements. Each batch is drawn as
one marker group whose id is ``batch-<index>``.
"""

import io
from enum import StrEnum
from pathlib import Path
from typing import Any

import matplotlib as mpl
import numpy as np
from loguru import logger
from matplotlib.figure import Figure
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, field_validator

from src.bench.colors import COLOR_SCALE_CONTRAST, SOURCE_COLOR, TARGET_COLOR
from src.core.domain_models import FloatArray
from src.core.errors import UnsupportedDimensionError
from src.core.file_manager import write_bytes_atomic

FIGURE_SIZE_IN = (6.0, 6.0)
DEFAULT_LIMITS = (-1.0, 1.0)
_PADDING = 0.08

_SVG_RC = {
    "svg.hashsalt": "anchorflow-bench",
    "svg.fonttype": "none",
    "path.simplify": False,
}


class BatchStyle(StrEnum):
    SOURCE = "source"
    EDITED = "edited"
    TARGET = "target"


class LabeledBatch(BaseModel):
    """Points of one scatter group with its legend label."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    label: str
    points: FloatArray
    style: BatchStyle = BatchStyle.EDITED
    color: str | None = None

    @field_validator("points")
    @classmethod
    def empty_as_planar(cls, v: NDArray[np.float64]) -> NDArray[np.float64]:
        return v.reshape(0, 2) if v.size == 0 else v


def _check_planar(batches: list[LabeledBatch]) -> None:
    for batch in batches:
        pts = batch.points
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise UnsupportedDimensionError(
                f"scatter plots need 2-D latents, batch '{batch.label}' has shape {pts.shape}"
            )


def _axis_limits(batches: list[LabeledBatch]) -> tuple[tuple[float, float], tuple[float, float]]:
    non_empty = [b.points for b in batches if b.points.shape[0] > 0]
    if not non_empty:
        return DEFAULT_LIMITS, DEFAULT_LIMITS
    pts = np.concatenate(non_empty)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    # Square viewport around the data
    center = (lo + hi) / 2.0
    half = max(float(np.max(hi - lo)) / 2.0, 0.5) * (1.0 + _PADDING)
    return (
        (float(center[0] - half), float(center[0] + half)),
        (float(center[1] - half), float(center[1] + half)),
    )


def scatter_svg_bytes(batches: list[LabeledBatch], title: str | None = None) -> bytes:
    """Render batches to SVG bytes."""
    _check_planar(batches)
    with mpl.rc_context(_SVG_RC):
        fig = Figure(figsize=FIGURE_SIZE_IN)
        ax = fig.add_subplot(1, 1, 1)
        for idx, batch in enumerate(batches):
            kwargs: dict[str, Any]
            if batch.style == BatchStyle.SOURCE:
                color = batch.color or SOURCE_COLOR
                kwargs = {"c": color, "s": 10.0, "alpha": 0.6}
            elif batch.style == BatchStyle.TARGET:
                color = batch.color or TARGET_COLOR
                kwargs = {"facecolors": "none", "edgecolors": color, "s": 14.0, "linewidths": 0.8}
            else:
                color = batch.color or COLOR_SCALE_CONTRAST[idx % len(COLOR_SCALE_CONTRAST)]
                kwargs = {"c": color, "s": 10.0}
            collection = ax.scatter(
                batch.points[:, 0], batch.points[:, 1], label=batch.label, clip_on=False, **kwargs
            )
            collection.set_gid(f"batch-{idx}")
        xlim, ylim = _axis_limits(batches)
        ax.set_xlim(*xlim)
        ax.set_ylim(*ylim)
        ax.set_aspect("equal")
        ax.set_xlabel("x_0")
        ax.set_ylabel("x_1")
        ax.grid(True, linewidth=0.3, alpha=0.5)
        if title:
            ax.set_title(title)
        if batches:
            ax.legend(loc="upper left", fontsize="small")
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def render_scatter_svg(
    batches: list[LabeledBatch], path: Path, title: str | None = None
) -> Path:
    """Write a standalone scatter SVG; only 2-D latents are supported."""
    payload = scatter_svg_bytes(batches, title)
    write_bytes_atomic(Path(path), payload)
    n_points = sum(b.points.shape[0] for b in batches)
    logger.debug(f"Wrote scatter with {len(batches)} batches ({n_points} points) to {path}")
    return Path(path)
