"""Scatter SVG rendering."""

from pathlib import Path

import numpy as np
import pytest

from src.bench.plots import BatchStyle, LabeledBatch, render_scatter_svg, scatter_svg_bytes
from src.core.errors import UnsupportedDimensionError
from src.core.rng import RngStream


def _group_markers(svg: str, gid: str) -> int:
    """Number of <use> markers in the marker group with the given id."""
    start = svg.index(f'<g id="{gid}">')
    end = svg.index("</g>", start)
    return svg[start:end].count("<use ")


def _batches(n: int = 100) -> list[LabeledBatch]:
    stream = RngStream(seed=6)
    source, edited, target = (stream.child(i).batch_normals(n, 2) for i in range(3))
    return [
        LabeledBatch(label="source", points=source - 3.0, style=BatchStyle.SOURCE),
        LabeledBatch(label="anchorflow", points=edited + 3.0),
        LabeledBatch(label="target", points=target + 3.0, style=BatchStyle.TARGET),
    ]


def test_one_marker_per_point() -> None:
    svg = scatter_svg_bytes(_batches(), title="anchorflow").decode("utf-8")
    for idx in range(3):
        assert _group_markers(svg, f"batch-{idx}") == 100


def test_output_is_byte_stable() -> None:
    assert scatter_svg_bytes(_batches(), "t") == scatter_svg_bytes(_batches(), "t")


def test_empty_batches_still_render(tmp_path: Path) -> None:
    empty = [LabeledBatch(label="edited", points=np.zeros((0, 2)))]
    assert scatter_svg_bytes(empty).startswith(b"<?xml")
    assert scatter_svg_bytes([]).startswith(b"<?xml")
    path = render_scatter_svg(empty, tmp_path / "empty.svg")
    assert path.exists()


def test_non_planar_points_rejected() -> None:
    batch = LabeledBatch(label="3d", points=np.zeros((5, 3)))
    with pytest.raises(UnsupportedDimensionError):
        scatter_svg_bytes([batch])


def test_render_writes_file(tmp_path: Path) -> None:
    path = render_scatter_svg(_batches(10), tmp_path / "plots" / "cell.svg", title="cell")
    assert path.read_bytes() == scatter_svg_bytes(_batches(10), "cell")
