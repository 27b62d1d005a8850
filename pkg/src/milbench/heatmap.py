"""Spatial heatmaps of per-instance scores or attention weights.

A bag with coordinates maps onto a dense (max_row + 1) x (max_col + 1)
grid; cells without an instance hold the sentinel -1.  Each export
writes two files from the same grid:

  * ``<stem>.csv``   raw values, comma-separated, one grid row per
    line, full repr precision, sentinel written as ``-1``;
  * ``<stem>.pgm``   binary 8-bit PGM (P5), pixel = floor(v * 255 +
    0.5) after clamping v to [0, 1], sentinel renders as 0.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bags import Bag
from .heads import EMBEDDING_KINDS, BagOutput

SENTINEL = -1.0
VALUE_MODES = ("auto", "scores", "weights")


def score_grid(coords: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Scatter per-instance values onto the dense grid."""
    coords = np.asarray(coords, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be K x 2, got {coords.shape}")
    if values.shape != (coords.shape[0],):
        raise ValueError(
            f"need one value per instance: {values.shape} values for {coords.shape[0]} coords"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError("heatmap values must be finite")
    grid = np.full((int(coords[:, 0].max()) + 1, int(coords[:, 1].max()) + 1), SENTINEL)
    grid[coords[:, 0], coords[:, 1]] = values
    return grid


def _format_cell(v: float) -> str:
    if v == SENTINEL:
        return "-1"
    return repr(float(v))


def write_grid_csv(grid: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    lines = [",".join(_format_cell(v) for v in row) for row in grid]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_grid_pgm(grid: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    clamped = np.clip(grid, 0.0, 1.0)
    pixels = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    pixels[grid == SENTINEL] = 0
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    return path


def heatmap_values(out: BagOutput, mode: str, kind: str) -> np.ndarray:
    """Pick the per-instance vector to plot for one bag.

    ``scores`` uses the instance-score column of the top bag class;
    ``weights`` uses the pooling/attention weights (per-class weights
    take the top class's column); ``auto`` picks weights for the
    embedding heads and scores otherwise.
    """
    if mode not in VALUE_MODES:
        raise ValueError(f"bad value mode {mode!r}, expected one of {VALUE_MODES}")
    if mode == "auto":
        mode = "weights" if kind in EMBEDDING_KINDS else "scores"
    top = int(np.argmax(out.bag_scores)) if out.bag_scores.shape[0] > 1 else 0
    if mode == "scores":
        return out.instance_scores[:, min(top, out.instance_scores.shape[1] - 1)]
    if out.weights is None:
        raise ValueError(f"{kind} defines no pooling weights; use --values scores")
    return out.weights[:, top] if out.weights.ndim == 2 else out.weights


def export_heatmap(bag: Bag, values: np.ndarray, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.pgm`` for one bag."""
    if bag.coords is None:
        raise ValueError(f"bag {bag.slide_id!r} has no coordinates")
    grid = score_grid(bag.coords, values)
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    return (
        write_grid_csv(grid, stem.with_suffix(".csv")),
        write_grid_pgm(grid, stem.with_suffix(".pgm")),
    )
