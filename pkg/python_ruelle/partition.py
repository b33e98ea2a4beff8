from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator


class GridPartition(BaseModel):
    """
    Uniform rectangular grid on the box domain prod_i [lows_i, highs_i].

    Cells are half-open [a, b) except the last cell of each dimension, which
    is closed. Boxes are numbered row-major, the first dimension varying
    slowest.
    """

    model_config = ConfigDict(frozen=True)

    dim: int
    lows: List[float]
    highs: List[float]
    cells: List[int]

    @model_validator(mode="after")
    def check_bounds(self) -> "GridPartition":
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not (len(self.lows) == len(self.highs) == len(self.cells) == self.dim):
            raise ValueError("lows, highs and cells need one entry per dimension")
        for lo, hi in zip(self.lows, self.highs):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"Invalid bounds [{lo}, {hi}]")
        if any(c < 1 for c in self.cells):
            raise ValueError("cells must be positive")
        return self

    @classmethod
    def uniform(cls, lows, highs, cells) -> "GridPartition":
        lows = [float(v) for v in np.atleast_1d(lows)]
        highs = [float(v) for v in np.atleast_1d(highs)]
        cells = [int(v) for v in np.atleast_1d(cells)]
        if len(cells) == 1 and len(lows) > 1:
            cells = cells * len(lows)
        return cls(dim=len(lows), lows=lows, highs=highs, cells=cells)

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return (np.asarray(self.highs) - np.asarray(self.lows)) / np.asarray(self.cells)


def locate_many(partition: GridPartition, points) -> np.ndarray:
    """
    Flat box index of every point, -1 for points outside the domain.

    :param points: array of shape (n, dim), or (n,) when dim == 1
    :raises ValueError: If a point is not finite or has the wrong dimension
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and partition.dim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] != partition.dim:
        raise ValueError(f"Points must have shape (n, {partition.dim})")
    if not np.isfinite(pts).all():
        raise ValueError("Points must be finite")

    lows = np.asarray(partition.lows)
    highs = np.asarray(partition.highs)
    cells = np.asarray(partition.cells)
    inside = ((pts >= lows) & (pts <= highs)).all(axis=1)

    scaled = (pts - lows) / (highs - lows) * cells
    multi = np.clip(np.floor(scaled).astype(np.int64), 0, cells - 1)
    flat = np.ravel_multi_index(tuple(multi.T), tuple(partition.cells))
    return np.where(inside, flat, -1).astype(np.int64)


def locate(partition: GridPartition, point) -> Optional[int]:
    idx = locate_many(partition, np.atleast_1d(np.asarray(point, dtype=float))[None, :])[0]
    return None if idx < 0 else int(idx)


def centers(partition: GridPartition, indices=None) -> np.ndarray:
    """Geometric centers of the given boxes (all boxes by default), shape (n, dim)."""
    if indices is None:
        indices = np.arange(partition.n_boxes)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= partition.n_boxes):
        raise ValueError(f"Box index out of range [0, {partition.n_boxes})")
    multi = np.stack(np.unravel_index(indices, tuple(partition.cells)), axis=-1)
    return np.asarray(partition.lows) + (multi + 0.5) * partition.widths


def center(partition: GridPartition, idx: int) -> np.ndarray:
    return centers(partition, [idx])[0]


def box_volume(partition: GridPartition) -> float:
    return float(np.prod(partition.widths))


def to_json(partition: GridPartition) -> str:
    return partition.model_dump_json()


def from_json(payload: str) -> GridPartition:
    return GridPartition.model_validate_json(payload)
