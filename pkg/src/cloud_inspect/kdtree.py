"""Exact nearest-neighbor search over a fixed point cloud.

The tree halves each point subset at the median of its widest axis, so the
structure is balanced (depth <= ceil(log2 n) + 1) and every query is an
exact O(log n) descent with backtracking. Ties in distance are broken
toward the smallest point index, which keeps every downstream result
reproducible. Distances are squared inside the kernels; the square root is
taken once at the API boundary.

Traversal kernels are JIT-compiled with numba so the batched lookups issued
by the registration and comparison hot loops run at native speed. Batched
queries write results by query index, so output is identical no matter how
many threads execute them.
"""

from __future__ import annotations

import numpy as np
import numba
from numba import njit, prange

# Prefer omp: it honors set_num_threads cleanly, and skipping the tbb probe
# avoids a spurious warning on systems with an outdated TBB.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .geometry import PointCloud, _as_points

__all__ = ["KdTree", "set_query_threads"]

_LEAF_SIZE = 16
_STACK_SIZE = 96


def set_query_threads(n: int) -> int:
    """Pin the number of threads used by batched queries (0 = automatic).

    Returns the thread count actually in effect. Results do not depend on
    this setting; it only controls parallelism.
    """
    limit = numba.config.NUMBA_NUM_THREADS
    effective = limit if n <= 0 else min(n, limit)
    numba.set_num_threads(effective)
    return effective


@njit(cache=True)
def _query_one(pts, perm, node_axis, node_split, node_left, node_right,
               node_start, node_end, qx, qy, qz, exclude, stack_node, stack_bound):
    best_d2 = np.inf
    best_i = -1
    stack_node[0] = 0
    stack_bound[0] = 0.0
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        # Strictly-greater pruning: subtrees whose slab distance ties the
        # current best may still hold an equal-distance, smaller index.
        if stack_bound[top] > best_d2:
            continue
        while node_axis[node] >= 0:
            ax = node_axis[node]
            if ax == 0:
                diff = qx - node_split[node]
            elif ax == 1:
                diff = qy - node_split[node]
            else:
                diff = qz - node_split[node]
            if diff < 0.0:
                near = node_left[node]
                far = node_right[node]
            else:
                near = node_right[node]
                far = node_left[node]
            fd2 = diff * diff
            if fd2 <= best_d2:
                stack_node[top] = far
                stack_bound[top] = fd2
                top += 1
            node = near
        for k in range(node_start[node], node_end[node]):
            i = perm[k]
            if i == exclude:
                continue
            dx = pts[i, 0] - qx
            dy = pts[i, 1] - qy
            dz = pts[i, 2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best_d2 or (d2 == best_d2 and i < best_i):
                best_d2 = d2
                best_i = i
    return best_i, best_d2


@njit(cache=True, parallel=True)
def _query_batch(pts, perm, node_axis, node_split, node_left, node_right,
                 node_start, node_end, queries, exclude_self, out_idx, out_d2):
    for j in prange(queries.shape[0]):
        stack_node = np.empty(_STACK_SIZE, dtype=np.int64)
        stack_bound = np.empty(_STACK_SIZE, dtype=np.float64)
        exclude = j if exclude_self else -1
        i, d2 = _query_one(pts, perm, node_axis, node_split, node_left,
                           node_right, node_start, node_end,
                           queries[j, 0], queries[j, 1], queries[j, 2],
                           exclude, stack_node, stack_bound)
        out_idx[j] = i
        out_d2[j] = d2


class KdTree:
    """Static spatial index over an immutable cloud; safe for concurrent queries."""

    def __init__(self, cloud):
        if isinstance(cloud, PointCloud):
            pts = cloud.points
        else:
            pts = _as_points(cloud)
            if not np.isfinite(pts).all():
                raise ValueError("cloud coordinates must be finite")
        n = len(pts)
        if n == 0:
            raise ValueError("empty cloud")
        self._points = np.ascontiguousarray(pts)
        self._points.setflags(write=False)
        self._build()

    def _build(self):
        pts = self._points
        n = len(pts)
        perm = np.arange(n, dtype=np.int64)
        axis, split, left, right = [], [], [], []
        start, end = [], []

        def new_node():
            axis.append(-1)
            split.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(0)
            end.append(0)
            return len(axis) - 1

        stack = [(0, n, new_node())]
        while stack:
            lo, hi, node = stack.pop()
            count = hi - lo
            if count <= _LEAF_SIZE:
                start[node] = lo
                end[node] = hi
                continue
            sub = pts[perm[lo:hi]]
            extent = sub.max(axis=0) - sub.min(axis=0)
            ax = int(np.argmax(extent))
            order = np.argsort(sub[:, ax], kind="stable")
            perm[lo:hi] = perm[lo:hi][order]
            mid = lo + count // 2
            axis[node] = ax
            split[node] = float(pts[perm[mid], ax])
            lc = new_node()
            rc = new_node()
            left[node] = lc
            right[node] = rc
            stack.append((lo, mid, lc))
            stack.append((mid, hi, rc))

        self._perm = perm
        self._node_axis = np.array(axis, dtype=np.int64)
        self._node_split = np.array(split, dtype=np.float64)
        self._node_left = np.array(left, dtype=np.int64)
        self._node_right = np.array(right, dtype=np.int64)
        self._node_start = np.array(start, dtype=np.int64)
        self._node_end = np.array(end, dtype=np.int64)
        for arr in (self._perm, self._node_axis, self._node_split,
                    self._node_left, self._node_right,
                    self._node_start, self._node_end):
            arr.setflags(write=False)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self) -> int:
        return len(self._points)

    def _run_batch(self, queries: np.ndarray, exclude_self: bool):
        out_idx = np.empty(len(queries), dtype=np.int64)
        out_d2 = np.empty(len(queries), dtype=np.float64)
        _query_batch(self._points, self._perm, self._node_axis,
                     self._node_split, self._node_left, self._node_right,
                     self._node_start, self._node_end,
                     np.ascontiguousarray(queries), exclude_self,
                     out_idx, out_d2)
        return out_idx, np.sqrt(out_d2)

    def nearest(self, query) -> tuple[int, float]:
        """Index of and distance to the closest point (smallest index on ties)."""
        q = np.asarray(query, dtype=np.float64).reshape(1, 3)
        if not np.isfinite(q).all():
            raise ValueError("non-finite query")
        idx, dist = self._run_batch(q, False)
        return int(idx[0]), float(dist[0])

    def nearest_within(self, query, radius: float):
        """Like nearest(), but None when the closest point is beyond `radius`."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        idx, dist = self.nearest(query)
        if dist <= radius:
            return idx, dist
        return None

    def nearest_batch(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbor for each query row; results are order-deterministic."""
        q = _as_points(queries, "queries")
        if not np.isfinite(q).all():
            raise ValueError("non-finite query")
        return self._run_batch(q, False)

    def point_spacings(self) -> np.ndarray:
        """Distance from each indexed point to its nearest other point."""
        if len(self._points) < 2:
            raise ValueError("spacing requires at least two points")
        _, dist = self._run_batch(self._points, True)
        return dist
