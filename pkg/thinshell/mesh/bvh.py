"""
Axis-aligned bounding-volume hierarchy over the faces of a triangle mesh.

The tree is stored as flat arrays and every query runs on a whole batch of points at once: the traversal keeps a
frontier of `(query, node)` pairs, prunes it with vectorized box tests and expands the surviving pairs level by level.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from thinshell.utils.geometry import closest_points_on_triangles, solid_angles

LEAF_SIZE = 8
QUERY_CHUNK = 4096
EXACT_PAIR_BUDGET = 2_000_000


def _expand_ranges(begin: np.ndarray, end: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenates `arange(begin[i], end[i])` for all `i`; also returns the owner `i` of every element."""
    counts = end - begin
    owners = np.repeat(np.arange(len(begin)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    slots = np.repeat(begin, counts) + (np.arange(counts.sum()) - starts)
    return slots, owners


class BoundingVolumeHierarchy:
    def __init__(self, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        """
        :param triangles: array of shape `(m, 3, 3)` with the corners of every face.
        :param leaf_size: maximum number of faces in a leaf.
        """
        self.triangles = np.ascontiguousarray(triangles, dtype=np.float64)
        face_count = len(self.triangles)
        centroids = self.triangles.mean(axis=1)
        self._centroid_tree = cKDTree(centroids)

        order = np.arange(face_count)
        lows, highs, lefts, rights, begins, ends = [], [], [], [], [], []

        def new_node(begin: int, end: int) -> int:
            corners = self.triangles[order[begin:end]].reshape(-1, 3)
            lows.append(corners.min(axis=0))
            highs.append(corners.max(axis=0))
            lefts.append(-1)
            rights.append(-1)
            begins.append(begin)
            ends.append(end)
            return len(lows) - 1

        stack = [new_node(0, face_count)]
        while stack:
            node = stack.pop()
            begin, end = begins[node], ends[node]
            if end - begin <= leaf_size:
                continue
            segment = order[begin:end]
            spread = centroids[segment].max(axis=0) - centroids[segment].min(axis=0)
            axis = int(np.argmax(spread))
            order[begin:end] = segment[np.argsort(centroids[segment, axis], kind="stable")]
            middle = (begin + end) // 2
            lefts[node] = new_node(begin, middle)
            rights[node] = new_node(middle, end)
            stack.extend([lefts[node], rights[node]])

        self.order = order
        self.lo = np.array(lows)
        self.hi = np.array(highs)
        self.left = np.array(lefts, dtype=np.int64)
        self.right = np.array(rights, dtype=np.int64)
        self.begin = np.array(begins, dtype=np.int64)
        self.end = np.array(ends, dtype=np.int64)

        # dipole data per node from prefix sums over the leaf ordering
        ordered = self.triangles[order]
        vector_areas = 0.5 * np.cross(ordered[:, 1] - ordered[:, 0], ordered[:, 2] - ordered[:, 0])
        areas = np.linalg.norm(vector_areas, axis=1)
        weighted = areas[:, None] * ordered.mean(axis=1)
        prefix_area = np.concatenate([[0.0], np.cumsum(areas)])
        prefix_normal = np.vstack([np.zeros(3), np.cumsum(vector_areas, axis=0)])
        prefix_weighted = np.vstack([np.zeros(3), np.cumsum(weighted, axis=0)])
        node_area = prefix_area[self.end] - prefix_area[self.begin]
        self.normal = prefix_normal[self.end] - prefix_normal[self.begin]
        box_center = 0.5 * (self.lo + self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            center = (prefix_weighted[self.end] - prefix_weighted[self.begin]) / node_area[:, None]
        self.center = np.where(node_area[:, None] > 0, center, box_center)
        far_corner = np.maximum(np.abs(self.hi - self.center), np.abs(self.center - self.lo))
        self.radius = np.linalg.norm(far_corner, axis=1)

    def _face_corners(self, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.triangles[faces]
        return tri[:, 0], tri[:, 1], tri[:, 2]

    def closest_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Exact closest points on the mesh for a batch of query points.

        :param points: array of shape `(n, 3)`.
        :return: distances `(n,)`, closest points `(n, 3)` and the face id holding each closest point `(n,)`.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        distances = np.empty(len(points))
        closest = np.empty((len(points), 3))
        faces = np.empty(len(points), dtype=np.int64)
        for start in range(0, len(points), QUERY_CHUNK):
            chunk = slice(start, start + QUERY_CHUNK)
            distances[chunk], closest[chunk], faces[chunk] = self._closest_chunk(points[chunk])
        return distances, closest, faces

    def _closest_chunk(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        # nearest centroid gives an exact upper bound to start pruning with
        _, seed_faces = self._centroid_tree.query(points)
        seed_faces = np.asarray(seed_faces, dtype=np.int64)
        best_point = closest_points_on_triangles(points, *self._face_corners(seed_faces))
        best_d2 = np.sum((points - best_point) ** 2, axis=1)
        best_face = seed_faces.copy()

        queries = np.arange(len(points))
        nodes = np.zeros(len(points), dtype=np.int64)
        while queries.size:
            p = points[queries]
            gap = np.maximum(np.maximum(self.lo[nodes] - p, p - self.hi[nodes]), 0.0)
            keep = np.sum(gap * gap, axis=1) <= best_d2[queries]
            queries, nodes = queries[keep], nodes[keep]
            is_leaf = self.left[nodes] < 0

            leaf_queries, leaf_nodes = queries[is_leaf], nodes[is_leaf]
            if leaf_queries.size:
                slots, owners = _expand_ranges(self.begin[leaf_nodes], self.end[leaf_nodes])
                pair_queries = leaf_queries[owners]
                pair_faces = self.order[slots]
                candidate = closest_points_on_triangles(points[pair_queries], *self._face_corners(pair_faces))
                d2 = np.sum((points[pair_queries] - candidate) ** 2, axis=1)
                ranking = np.lexsort((pair_faces, d2, pair_queries))
                ranked_queries = pair_queries[ranking]
                first = ranking[np.r_[True, ranked_queries[1:] != ranked_queries[:-1]]]
                winners = pair_queries[first]
                better = d2[first] < best_d2[winners]
                winners, first = winners[better], first[better]
                best_d2[winners] = d2[first]
                best_point[winners] = candidate[first]
                best_face[winners] = pair_faces[first]

            inner_queries, inner_nodes = queries[~is_leaf], nodes[~is_leaf]
            queries = np.concatenate([inner_queries, inner_queries])
            nodes = np.concatenate([self.left[inner_nodes], self.right[inner_nodes]])
        return np.sqrt(best_d2), best_point, best_face

    def exact_winding_numbers(self, points: np.ndarray) -> np.ndarray:
        """Generalized winding numbers as the plain sum of per-face solid angles over `4 pi`."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        a, b, c = self.triangles[:, 0], self.triangles[:, 1], self.triangles[:, 2]
        step = max(1, EXACT_PAIR_BUDGET // max(len(self.triangles), 1))
        result = np.empty(len(points))
        for start in range(0, len(points), step):
            p = points[start : start + step, None, :]
            result[start : start + step] = solid_angles(p, a[None], b[None], c[None]).sum(axis=1)
        return result / (4.0 * np.pi)

    def winding_numbers(self, points: np.ndarray, accuracy: Optional[float] = 2.0) -> np.ndarray:
        """
        Generalized winding numbers for a batch of points.

        :param points: array of shape `(n, 3)`.
        :param accuracy: nodes farther than `accuracy` times their radius are replaced by their dipole (area-weighted
            normal at the area centroid). `None` sums every face exactly.
        """
        if accuracy is None:
            return self.exact_winding_numbers(points)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        total = np.zeros(len(points))
        for start in range(0, len(points), QUERY_CHUNK):
            chunk = slice(start, start + QUERY_CHUNK)
            total[chunk] = self._approximate_chunk(points[chunk], accuracy)
        return total / (4.0 * np.pi)

    def _approximate_chunk(self, points: np.ndarray, accuracy: float) -> np.ndarray:
        total = np.zeros(len(points))
        queries = np.arange(len(points))
        nodes = np.zeros(len(points), dtype=np.int64)
        while queries.size:
            offset = self.center[nodes] - points[queries]
            distance = np.linalg.norm(offset, axis=1)
            far = distance > accuracy * self.radius[nodes]
            if far.any():
                dipole = np.einsum("ij,ij->i", self.normal[nodes[far]], offset[far]) / distance[far] ** 3
                np.add.at(total, queries[far], dipole)

            near_queries, near_nodes = queries[~far], nodes[~far]
            is_leaf = self.left[near_nodes] < 0
            leaf_queries, leaf_nodes = near_queries[is_leaf], near_nodes[is_leaf]
            if leaf_queries.size:
                slots, owners = _expand_ranges(self.begin[leaf_nodes], self.end[leaf_nodes])
                pair_queries = leaf_queries[owners]
                a, b, c = self._face_corners(self.order[slots])
                np.add.at(total, pair_queries, solid_angles(points[pair_queries], a, b, c))

            inner_queries, inner_nodes = near_queries[~is_leaf], near_nodes[~is_leaf]
            queries = np.concatenate([inner_queries, inner_queries])
            nodes = np.concatenate([self.left[inner_nodes], self.right[inner_nodes]])
        return total
