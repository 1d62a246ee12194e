"""Cloud alignment: closed-form similarity estimation, coarse init, ICP.

The minimization step is the closed-form least-squares similarity fit
(centered cross-covariance, SVD, reflection correction via the determinant
sign, scale from the singular values over the source variance). The coarse
initializer matches centroids, RMS radii, and principal axes, with axis
signs disambiguated by the third central moment. ICP alternates
nearest-neighbor matching against a fixed target index with a fresh
closed-form fit, stopping when the transform update moves the source
bounding box corners by less than the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Aabb, PointCloud, SimilarityTransform, _as_points, bounding_box
from .kdtree import KdTree

__all__ = [
    "IcpParams",
    "IcpIteration",
    "IcpResult",
    "CorrespondenceSet",
    "CorrespondenceStarvation",
    "estimate_similarity",
    "initial_align",
    "icp",
    "register",
]

# Engineering defaults; neither bound is prescribed anywhere upstream.
DEFAULT_MAX_ITERATIONS = 50
DEFAULT_TOLERANCE_FRACTION = 1e-6  # of the target bbox diagonal
DEFAULT_CORRESPONDENCE_FRACTION = 0.05  # of the target bbox diagonal

_SKEW_TIE_TOL = 1e-9


class CorrespondenceStarvation(RuntimeError):
    """Raised when fewer than 3 pairs survive the distance bound."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(
            f"correspondence starvation at iteration {iteration}: "
            "fewer than 3 pairs within the distance bound"
        )


@dataclass(frozen=True)
class IcpParams:
    """Loop controls for icp()/register().

    tolerance and max_correspondence_distance default to fractions of the
    target bounding-box diagonal when left as None; use math.inf to disable
    the correspondence bound entirely.
    """

    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: Optional[float] = None
    max_correspondence_distance: Optional[float] = None
    with_scaling: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if (self.max_correspondence_distance is not None
                and not self.max_correspondence_distance > 0):
            raise ValueError("max_correspondence_distance must be positive")


@dataclass(frozen=True)
class IcpIteration:
    """Matching-step diagnostics: summed distance, rmse, surviving pair count."""

    cost: float
    rmse: float
    correspondence_count: int


@dataclass(frozen=True)
class IcpResult:
    transform: SimilarityTransform
    iterations_run: int
    converged: bool
    history: tuple[IcpIteration, ...]

    @property
    def final_rmse(self) -> float:
        return self.history[-1].rmse


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched (source, target) index pairs with their distances."""

    source_indices: np.ndarray
    target_indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.source_indices)


def estimate_similarity(source_pts, target_pts, with_scaling: bool = True) -> SimilarityTransform:
    """Least-squares similarity transform mapping source points onto targets.

    Minimizes sum_i ||s R p_i + t - q_i||^2 in closed form. The rotation is
    reflection-corrected, so a mirrored target yields the best proper
    rotation (with nonzero residual) rather than an improper one. With
    with_scaling=False the scale is pinned to exactly 1.
    """
    src = _as_points(source_pts, "source_pts")
    tgt = _as_points(target_pts, "target_pts")
    if len(src) != len(tgt):
        raise ValueError("source and target correspondence counts differ")
    n = len(src)
    if n < 3:
        raise ValueError("insufficient correspondences")
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    cs = src - mu_s
    ct = tgt - mu_t
    var_s = float(np.einsum("ni,ni->", cs, cs)) / n
    extent = float(np.abs(src).max())
    if math.sqrt(var_s) <= 1e-12 * (1.0 + extent):
        raise ValueError("degenerate configuration")
    cov = np.einsum("ni,nj->ij", ct, cs) / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    if d[1] <= 1e-12 * d[0]:
        raise ValueError("degenerate configuration")
    rotation = u @ np.diag(sign) @ vt
    scale = float(np.dot(d, sign)) / var_s if with_scaling else 1.0
    if not scale > 0:
        raise ValueError("degenerate configuration")
    translation = mu_t - scale * (rotation @ mu_s)
    return SimilarityTransform(scale, rotation, translation)


def _principal_frame(pts: np.ndarray):
    """Centroid, oriented principal axes (det +1), and RMS radius of a cloud.

    Axes are eigenvectors of the centered covariance, eigenvalues
    descending. Each axis is first flipped so its largest-magnitude
    component is positive (a fixed fallback orientation), then flipped
    again if the standardized third moment along it is below -1e-9, so a
    clearly skewed distribution always points its axis toward the heavy
    tail. A final flip of the last axis enforces det +1.
    """
    n = len(pts)
    mu = pts.mean(axis=0)
    c = pts - mu
    cov = np.einsum("ni,nj->ij", c, c) / n
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1].copy()
    axes = evecs[:, ::-1].copy()
    rms = math.sqrt(max(float(evals.sum()), 0.0))
    if rms <= 1e-12 * (1.0 + float(np.abs(pts).max())):
        raise ValueError("degenerate covariance")
    for k in range(3):
        a = axes[:, k]
        if a[np.argmax(np.abs(a))] < 0:
            a = -a
        lam = float(evals[k])
        if lam > 0:
            proj = c @ a
            skew = float(np.mean(proj**3)) / lam**1.5
            if skew < -_SKEW_TIE_TOL:
                a = -a
        axes[:, k] = a
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    return mu, axes, rms


def initial_align(source: PointCloud, target: PointCloud) -> SimilarityTransform:
    """Coarse source->target alignment from centroids, RMS radii, and axes.

    Unlike the ICP refinement this needs no correspondences, so it absorbs
    arbitrary scale and orientation offsets before the iterative stage. On
    near-symmetric clouds (equal eigenvalues or vanishing skew) the axis
    orientation falls back to a fixed rule and may be off by a flip; the
    result is deterministic either way.
    """
    if len(source) < 3 or len(target) < 3:
        raise ValueError("initial alignment needs at least 3 points per cloud")
    mu_s, axes_s, rms_s = _principal_frame(source.points)
    mu_t, axes_t, rms_t = _principal_frame(target.points)
    scale = rms_t / rms_s
    rotation = axes_t @ axes_s.T
    translation = mu_t - scale * (rotation @ mu_s)
    return SimilarityTransform(scale, rotation, translation)


def _match(tree: KdTree, transformed: np.ndarray, max_distance: float) -> CorrespondenceSet:
    idx, dist = tree.nearest_batch(transformed)
    if math.isfinite(max_distance):
        keep = dist <= max_distance
        src = np.flatnonzero(keep)
        return CorrespondenceSet(src, idx[keep], dist[keep])
    return CorrespondenceSet(np.arange(len(transformed)), idx, dist)


def _transform_delta(a: SimilarityTransform, b: SimilarityTransform, corners: np.ndarray) -> float:
    """Displacement norm between two transforms: max movement of the corners."""
    return float(np.linalg.norm(a.apply_points(corners) - b.apply_points(corners), axis=1).max())


def icp(source: PointCloud, target: PointCloud, init: SimilarityTransform,
        params: IcpParams = IcpParams()) -> IcpResult:
    """Iterative closest point refinement of `init`, mapping source onto target.

    Each iteration matches every transformed source point to its nearest
    target point (pairs beyond the correspondence bound are dropped),
    records the match cost (summed distance), rmse, and pair count, then
    re-fits the transform over the pairs in closed form. The loop exits
    early (converged=True) once an update moves the source bbox corners by
    less than the tolerance.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("empty cloud")
    tree = KdTree(target)
    diag = bounding_box(target).diagonal
    tol = params.tolerance if params.tolerance is not None else DEFAULT_TOLERANCE_FRACTION * diag
    if params.max_correspondence_distance is not None:
        max_dist = params.max_correspondence_distance
    else:
        max_dist = DEFAULT_CORRESPONDENCE_FRACTION * diag
    if not tol > 0 or not max_dist > 0:
        raise ValueError("degenerate target extent; pass explicit tolerance and bound")
    corners = bounding_box(source).corners()

    transform = init
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = transform.apply_points(source.points)
        pairs = _match(tree, moved, max_dist)
        if len(pairs) < 3:
            raise CorrespondenceStarvation(iterations)
        dist = pairs.distances
        history.append(IcpIteration(
            cost=float(dist.sum()),
            rmse=float(np.sqrt(np.mean(dist * dist))),
            correspondence_count=len(pairs),
        ))
        updated = estimate_similarity(
            source.points[pairs.source_indices],
            target.points[pairs.target_indices],
            params.with_scaling,
        )
        delta = _transform_delta(updated, transform, corners)
        transform = updated
        if delta < tol:
            converged = True
            break
    return IcpResult(transform, iterations, converged, tuple(history))


def register(source: PointCloud, target: PointCloud,
             params: IcpParams = IcpParams()) -> IcpResult:
    """One-call alignment: coarse principal-axis init followed by ICP."""
    return icp(source, target, initial_align(source, target), params)
