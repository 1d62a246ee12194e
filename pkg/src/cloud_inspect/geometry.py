"""Core 3D types: point clouds, similarity transforms, boxes, voxel grids.

Everything downstream (spatial indexing, registration, comparison) is built
on these types. All values are immutable after construction; operations
return new objects. Coordinates are kept in double precision throughout,
and reductions (centroids, voxel averages) use a fixed summation order so
repeated runs produce bit-identical results.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "PointCloud",
    "SimilarityTransform",
    "Aabb",
    "VoxelGrid",
    "centroid",
    "bounding_box",
    "voxelize",
    "voxel_downsample",
    "occupancy_volume",
]

_ORTHO_TOL = 1e-9


def _as_points(a, name: str = "points") -> np.ndarray:
    pts = np.ascontiguousarray(a, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must be an (N, 3) array, got shape {pts.shape}")
    return pts


def _points_of(cloud) -> np.ndarray:
    """Accept either a PointCloud or a bare (N, 3) array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    return _as_points(cloud)


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional per-point RGB colors.

    Point order is part of the identity: operations that do not explicitly
    reorder (transforming, colorizing) keep index i pointing at the same
    physical point. Arrays are frozen after construction; colors, when
    present, are uint8 triples matching the point count.
    """

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _as_points(self.points)
        finite = np.isfinite(pts)
        if not finite.all():
            bad = int(np.flatnonzero(~finite.all(axis=1))[0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.shape != (len(pts), 3):
                raise ValueError(
                    f"colors must have shape ({len(pts)}, 3), got {col.shape}"
                )
            if col.dtype != np.uint8:
                if not np.issubdtype(col.dtype, np.integer):
                    raise ValueError("colors must be integers in [0, 255]")
                if col.size and (col.min() < 0 or col.max() > 255):
                    raise ValueError("color channels must lie in [0, 255]")
                col = col.astype(np.uint8)
            col = np.ascontiguousarray(col)
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    def select(self, index) -> "PointCloud":
        """Subset by boolean mask or index array, colors carried along."""
        colors = self.colors[index] if self.colors is not None else None
        return PointCloud(self.points[index], colors)

    def with_colors(self, colors) -> "PointCloud":
        return PointCloud(self.points, colors)


@dataclass(frozen=True)
class SimilarityTransform:
    """Uniform scale, proper rotation, and translation: p -> s * R @ p + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        s = float(self.scale)
        if not np.isfinite(s) or s <= 0.0:
            raise ValueError(f"scale must be a positive finite number, got {s}")
        R = np.ascontiguousarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3) or not np.isfinite(R).all():
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.abs(R.T @ R - np.eye(3)).max() >= _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= _ORTHO_TOL:
            raise ValueError("rotation must be proper (det +1, no reflection)")
        t = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if not np.isfinite(t).all():
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply_points(self, points) -> np.ndarray:
        pts = _as_points(points)
        return pts @ (self.scale * self.rotation).T + self.translation

    def apply(self, cloud: PointCloud) -> PointCloud:
        """Transform every point; colors and point order are preserved."""
        return PointCloud(self.apply_points(cloud.points), cloud.colors)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """The transform equivalent to applying `other` first, then self."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        inv_s = 1.0 / self.scale
        inv_r = self.rotation.T.copy()
        return SimilarityTransform(inv_s, inv_r, -inv_s * (inv_r @ self.translation))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box; both faces are inclusive."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.ascontiguousarray(self.min, dtype=np.float64).reshape(3)
        hi = np.ascontiguousarray(self.max, dtype=np.float64).reshape(3)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box corners must be finite")
        if (lo > hi).any():
            raise ValueError("box min must not exceed max componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max - self.min))

    def corners(self) -> np.ndarray:
        """The 8 corner points, in a fixed (lexicographic) order."""
        picks = list(itertools.product(*zip(self.min, self.max)))
        return np.array(picks, dtype=np.float64)

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the box (boundary counts as inside)."""
        pts = _points_of(points)
        return ((pts >= self.min) & (pts <= self.max)).all(axis=1)


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy set over a cubic lattice anchored at `origin`."""

    origin: np.ndarray
    voxel_size: float
    occupied: frozenset

    def __post_init__(self):
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise ValueError("voxel_size must be positive")
        origin = np.ascontiguousarray(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "occupied", frozenset(self.occupied))


def centroid(cloud) -> np.ndarray:
    """Arithmetic mean of the points, in index order (pairwise summation)."""
    pts = _points_of(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    return pts.mean(axis=0)


def bounding_box(cloud) -> Aabb:
    pts = _points_of(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    return Aabb(pts.min(axis=0), pts.max(axis=0))


def _grid_origin(pts: np.ndarray, voxel_size: float) -> np.ndarray:
    # Snapping to a voxel_size multiple makes indices reproducible regardless
    # of point order, and keeps the lattice stable under re-voxelization.
    return np.floor(pts.min(axis=0) / voxel_size) * voxel_size


def _voxel_indices(pts: np.ndarray, origin: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor((pts - origin) / voxel_size).astype(np.int64)


def voxelize(cloud, voxel_size: float, origin=None) -> VoxelGrid:
    """Occupancy grid of the cloud at the given resolution.

    An empty cloud yields an empty grid. The default origin is the bbox
    minimum snapped down to a voxel_size multiple.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    pts = _points_of(cloud)
    if len(pts) == 0:
        return VoxelGrid(np.zeros(3) if origin is None else origin, voxel_size, frozenset())
    if origin is None:
        origin = _grid_origin(pts, voxel_size)
    idx = _voxel_indices(pts, np.asarray(origin, dtype=np.float64), voxel_size)
    occupied = frozenset(map(tuple, np.unique(idx, axis=0).tolist()))
    return VoxelGrid(origin, voxel_size, occupied)


def occupancy_volume(grid: VoxelGrid) -> float:
    """Total volume of the occupied voxels."""
    return len(grid.occupied) * grid.voxel_size**3


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Collapse each occupied voxel to the centroid of its points.

    Output points are ordered by voxel index (z-major, then y, then x).
    Colors, when present, are averaged per voxel and rounded to the nearest
    integer. Within a voxel, points contribute in index order, so the result
    is bit-stable across runs.
    """
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        raise ValueError("empty cloud")
    origin = _grid_origin(pts, voxel_size)
    idx = _voxel_indices(pts, origin, voxel_size)
    order = np.lexsort((np.arange(n), idx[:, 0], idx[:, 1], idx[:, 2]))
    sorted_idx = idx[order]
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    boundary[1:] = (sorted_idx[1:] != sorted_idx[:-1]).any(axis=1)
    starts = np.flatnonzero(boundary)
    counts = np.diff(np.append(starts, n)).reshape(-1, 1)
    merged = np.add.reduceat(pts[order], starts, axis=0) / counts
    colors = None
    if cloud.colors is not None:
        sums = np.add.reduceat(cloud.colors[order].astype(np.float64), starts, axis=0)
        colors = np.rint(sums / counts).astype(np.uint8)
    return PointCloud(merged, colors)
