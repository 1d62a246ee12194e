"""Shared test utilities: independent oracles and random generators.

Everything here is deliberately written against numpy directly (linear
scans, dict buckets, QR factorizations) so tests never exercise the code
path they are checking.
"""

import math

import numpy as np

from cloud_inspect import PointCloud, SimilarityTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_similarity(rng: np.random.Generator, scale_range=(0.5, 2.0),
                      translation_scale=1.0) -> SimilarityTransform:
    return SimilarityTransform(
        rng.uniform(*scale_range),
        random_rotation(rng),
        rng.uniform(-translation_scale, translation_scale, 3),
    )


def rotation_angle_between(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between two rotations, accurate near zero."""
    fro = np.linalg.norm(r1 - r2)
    return 2.0 * math.asin(min(fro / (2.0 * math.sqrt(2.0)), 1.0))


def brute_force_nearest(points: np.ndarray, query: np.ndarray, exclude: int = -1):
    """Linear-scan oracle: (index, distance), smallest index on ties."""
    d2 = np.sum((points - query) ** 2, axis=1)
    if exclude >= 0:
        d2[exclude] = np.inf
    idx = int(np.argmin(d2))  # argmin returns the first (smallest) index
    return idx, math.sqrt(d2[idx])


def brute_force_nearest_batch(points: np.ndarray, queries: np.ndarray):
    idx = np.empty(len(queries), dtype=np.int64)
    dist = np.empty(len(queries))
    for j, q in enumerate(queries):
        idx[j], dist[j] = brute_force_nearest(points, q)
    return idx, dist


def skewed_cloud(rng: np.random.Generator, n: int) -> PointCloud:
    """Anisotropic cloud with distinct principal extents and strong skew on
    every axis; exponential marginals with different scales."""
    pts = np.column_stack([
        rng.exponential(1.0, n),
        rng.exponential(2.0, n),
        rng.exponential(3.5, n),
    ])
    return PointCloud(pts)


def voxel_bucket_count(points: np.ndarray, voxel_size: float) -> int:
    """Dict-of-buckets oracle for the number of occupied voxels."""
    origin = np.floor(points.min(axis=0) / voxel_size) * voxel_size
    buckets = set()
    for p in points:
        buckets.add(tuple(np.floor((p - origin) / voxel_size).astype(int)))
    return len(buckets)
