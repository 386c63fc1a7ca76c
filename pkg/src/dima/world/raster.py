"""Bird's-eye-view rasterization onto square cell grids.

A cell belongs to a box when its center lies inside (boundary inclusive);
map channels mark cells whose center is within half a cell of a polyline.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from dima.errors import ConfigError
from dima.world.geometry import OrientedBox, polyline_distance
from dima.world.types import Scene

# channel order in rasterize_bev output
CH_OCCUPANCY, CH_LANE, CH_BOUNDARY = 0, 1, 2

_CELL_OFF = 2_000_000  # occupied_cells encoding offset; |index| < this


@dataclass(frozen=True)
class GridSpec:
    """Square window of half-width ``extent`` split into ``resolution`` cells."""

    resolution: float
    extent: float

    def __post_init__(self):
        if self.resolution <= 0 or self.extent <= 0:
            raise ConfigError("grid resolution and extent must be positive")
        n = 2.0 * self.extent / self.resolution
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(
                f"2*extent/resolution = {n} is not an integer cell count"
            )

    @property
    def cells_per_side(self) -> int:
        return int(round(2.0 * self.extent / self.resolution))


@lru_cache(maxsize=32)
def _cell_centers(grid: GridSpec) -> np.ndarray:
    """(H*W, 2) centers in row-major order; row index walks x, column walks y."""
    n = grid.cells_per_side
    coords = -grid.extent + (np.arange(n) + 0.5) * grid.resolution
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def rasterize_bev(scene: Scene, grid: GridSpec) -> np.ndarray:
    """(H, W, 3) float grid: agent occupancy at t=0, lane and boundary marks."""
    n = grid.cells_per_side
    centers = _cell_centers(grid)
    out = np.zeros((n, n, 3), dtype=np.float64)

    occ = np.zeros(len(centers), dtype=bool)
    for agent in scene.agents:
        x, y = agent.trajectory[0]
        box = OrientedBox(float(x), float(y), agent.heading, agent.length, agent.width)
        occ |= box.contains_points(centers)
    out[:, :, CH_OCCUPANCY] = occ.reshape(n, n)

    half_cell = grid.resolution / 2.0
    for line in scene.map_lines:
        channel = CH_BOUNDARY if line.kind == "boundary" else CH_LANE
        near = polyline_distance(centers, line.points) <= half_cell
        out[:, :, channel] = np.maximum(out[:, :, channel], near.reshape(n, n))
    return out


def occupied_cells(box: OrientedBox, resolution: float) -> np.ndarray:
    """Cells of a global grid (anchored at the origin) claimed by the box.

    Returns sorted unique int64 codes; two boxes share a cell iff their code
    arrays intersect.
    """
    corners = box.corners()
    i0 = int(np.floor(corners[:, 0].min() / resolution))
    i1 = int(np.floor(corners[:, 0].max() / resolution))
    j0 = int(np.floor(corners[:, 1].min() / resolution))
    j1 = int(np.floor(corners[:, 1].max() / resolution))
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    centers = np.column_stack([
        (ii.ravel() + 0.5) * resolution,
        (jj.ravel() + 0.5) * resolution,
    ])
    inside = box.contains_points(centers)
    codes = (ii.ravel()[inside] + _CELL_OFF) * (2 * _CELL_OFF) + (jj.ravel()[inside] + _CELL_OFF)
    return np.unique(codes.astype(np.int64))
