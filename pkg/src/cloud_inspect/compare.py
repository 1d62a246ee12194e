"""Bidirectional matched/unmatched classification and diff-cloud rendering.

Every point is labeled by its nearest-neighbor distance into the other
cloud: at or below the threshold it is matched, above it is unmatched.
Both directions matter; a part missing from the field scan shows up as
unmatched points on the reference side, and a part added or displaced in
the field shows up on the field side. The unmatched point sets are
voxelized to produce a volume measurement per direction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, occupancy_volume, voxelize
from .kdtree import KdTree

__all__ = [
    "MatchLabel",
    "ComparisonResult",
    "classify",
    "compare",
    "auto_threshold",
    "colorize_diff",
    "RED",
    "GREEN",
    "GRAY",
    "PINK",
]

RED = (255, 0, 0)
GREEN = (0, 255, 0)
GRAY = (128, 128, 128)
PINK = (255, 192, 203)

AUTO_THRESHOLD_SPACING_FACTOR = 3.0


class MatchLabel(enum.IntEnum):
    UNMATCHED = 0
    MATCHED = 1


def classify(cloud: PointCloud, reference: PointCloud, threshold: float):
    """Label each cloud point against the reference.

    Returns (labels, distances): labels is an int8 array of MatchLabel
    values, distances the nearest-neighbor distance per point. A distance
    exactly equal to the threshold counts as matched. Both clouds must
    already be in a common frame.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if len(cloud) == 0 or len(reference) == 0:
        raise ValueError("empty cloud")
    tree = KdTree(reference)
    _, distances = tree.nearest_batch(cloud.points)
    labels = np.where(distances <= threshold, np.int8(MatchLabel.MATCHED),
                      np.int8(MatchLabel.UNMATCHED))
    return labels, distances


@dataclass(frozen=True)
class ComparisonResult:
    """Two-way classification of a (field, reference) pair.

    Direction a is field-vs-reference, direction b is reference-vs-field.
    Unmatched volumes are occupancy volumes of the respective unmatched
    point sets, voxelized at `voxel_size`.
    """

    threshold: float
    voxel_size: float
    labels_a_vs_b: np.ndarray
    labels_b_vs_a: np.ndarray
    nearest_distance_a: np.ndarray
    nearest_distance_b: np.ndarray
    unmatched_count_a: int
    unmatched_count_b: int
    unmatched_volume_a: float
    unmatched_volume_b: float


def _unmatched_volume(points: np.ndarray, labels: np.ndarray, voxel_size: float) -> float:
    unmatched = points[labels == MatchLabel.UNMATCHED]
    return occupancy_volume(voxelize(unmatched, voxel_size))


def compare(field: PointCloud, reference: PointCloud, threshold: float,
            voxel_size: float) -> ComparisonResult:
    """Classify both directions and measure unmatched volumes."""
    if not voxel_size > 0:
        raise ValueError("voxel_size must be positive")
    labels_a, dist_a = classify(field, reference, threshold)
    labels_b, dist_b = classify(reference, field, threshold)
    return ComparisonResult(
        threshold=float(threshold),
        voxel_size=float(voxel_size),
        labels_a_vs_b=labels_a,
        labels_b_vs_a=labels_b,
        nearest_distance_a=dist_a,
        nearest_distance_b=dist_b,
        unmatched_count_a=int(np.sum(labels_a == MatchLabel.UNMATCHED)),
        unmatched_count_b=int(np.sum(labels_b == MatchLabel.UNMATCHED)),
        unmatched_volume_a=_unmatched_volume(field.points, labels_a, voxel_size),
        unmatched_volume_b=_unmatched_volume(reference.points, labels_b, voxel_size),
    )


def auto_threshold(field: PointCloud, reference: PointCloud) -> float:
    """Distance threshold derived from the reference sampling density.

    Three times the median spacing of the reference cloud, where spacing is
    each reference point's distance to its nearest other point. The field
    cloud does not enter the value; it is accepted so callers can treat
    this as a drop-in default for any compared pair.
    """
    if len(reference) < 2:
        raise ValueError("auto threshold requires at least 2 reference points")
    spacings = KdTree(reference).point_spacings()
    return AUTO_THRESHOLD_SPACING_FACTOR * float(np.median(spacings))


def colorize_diff(field: PointCloud, reference: PointCloud,
                  result: ComparisonResult, palette: str = "red-green") -> PointCloud:
    """Merged diff cloud with the classification painted as colors.

    red-green (default): field points come first, unmatched red and matched
    gray, followed by the reference's unmatched points in green (matched
    reference points are omitted to avoid doubling density). pink: one
    directional, just the field points with unmatched in pink and matched
    gray.
    """
    if len(result.labels_a_vs_b) != len(field) or len(result.labels_b_vs_a) != len(reference):
        raise ValueError("comparison result does not match the given clouds")
    field_unmatched = result.labels_a_vs_b == MatchLabel.UNMATCHED
    if palette == "pink":
        colors = np.where(field_unmatched[:, None], np.uint8(PINK), np.uint8(GRAY))
        return PointCloud(field.points, colors)
    if palette != "red-green":
        raise ValueError(f"unknown palette {palette!r}")
    field_colors = np.where(field_unmatched[:, None], np.uint8(RED), np.uint8(GRAY))
    ref_unmatched = result.labels_b_vs_a == MatchLabel.UNMATCHED
    ref_points = reference.points[ref_unmatched]
    ref_colors = np.broadcast_to(np.uint8(GREEN), (len(ref_points), 3))
    return PointCloud(
        np.vstack([field.points, ref_points]),
        np.vstack([field_colors, ref_colors]),
    )
