"""Oriented rectangles and polyline distance in the ground plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle centered at (cx, cy), rotated by heading, length along heading."""

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        c, s = np.cos(self.heading), np.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Boolean per point; the boundary is inclusive."""
        c, s = np.cos(self.heading), np.sin(self.heading)
        dx = points[:, 0] - self.cx
        dy = points[:, 1] - self.cy
        lx = dx * c + dy * s
        ly = -dx * s + dy * c
        return (np.abs(lx) <= self.length / 2.0) & (np.abs(ly) <= self.width / 2.0)

    def inflate(self, margin: float) -> "OrientedBox":
        return OrientedBox(self.cx, self.cy, self.heading,
                           self.length + 2.0 * margin, self.width + 2.0 * margin)


def boxes_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test; touching rectangles count as intersecting."""
    dc = np.array([b.cx - a.cx, b.cy - a.cy])
    axes = []
    for box in (a, b):
        c, s = np.cos(box.heading), np.sin(box.heading)
        axes.append(np.array([c, s]))
        axes.append(np.array([-s, c]))
    half = [(a.length / 2.0, a.width / 2.0), (b.length / 2.0, b.width / 2.0)]
    for axis in axes:
        r = 0.0
        for (hl, hw), box_axes in zip(half, (axes[0:2], axes[2:4])):
            r += hl * abs(float(box_axes[0] @ axis)) + hw * abs(float(box_axes[1] @ axis))
        if abs(float(dc @ axis)) > r:
            return False
    return True


def point_box_distance(px: float, py: float, box: OrientedBox) -> float:
    """Euclidean distance from a point to the rectangle; 0 inside."""
    c, s = np.cos(box.heading), np.sin(box.heading)
    dx, dy = px - box.cx, py - box.cy
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    ox = max(abs(lx) - box.length / 2.0, 0.0)
    oy = max(abs(ly) - box.width / 2.0, 0.0)
    return float(np.hypot(ox, oy))


def polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polyline segment.

    ``points`` is (n, 2); ``polyline`` is (m, 2) with m >= 2.
    """
    a = polyline[:-1][None, :, :]  # (1, m-1, 2)
    b = polyline[1:][None, :, :]
    p = points[:, None, :]  # (n, 1, 2)
    ab = b - a
    denom = (ab * ab).sum(axis=2)
    denom = np.where(denom == 0.0, 1.0, denom)
    t = ((p - a) * ab).sum(axis=2) / denom
    t = np.clip(t, 0.0, 1.0)
    nearest = a + t[:, :, None] * ab
    d = np.linalg.norm(p - nearest, axis=2)
    return d.min(axis=1)
