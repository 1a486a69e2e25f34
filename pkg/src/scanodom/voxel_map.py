"""Bounded voxel-grid map over 3D points with nearest-neighbor queries.

The map stores points in the global frame, bucketed by the voxel they fall
into. Each voxel holds up to `max_points_per_voxel` points; once full it is
never updated, so early (well-registered) geometry is preserved. Stored
coordinates are exactly the inserted ones. `remove_far` prunes whole voxels
whose first point lies beyond `max_range` of a given origin, which keeps the
map bounded as the sensor travels.

Storage is a flat array of points plus a packed 63-bit integer key per point
(21 bits per axis), with per-voxel occupancy in a hash table. Queries search
the voxels within Chebyshev radius ceil(max_dist / voxel_size) of the query
cell, which is guaranteed to contain every point within `max_dist`. Distance
ties are broken by lexicographic voxel offset, then insertion order within
the bucket; comparisons use squared distances. The same rule is applied by
the batch query, so results are deterministic and independent of batching.
"""

from __future__ import annotations

import numpy as np

from .preprocess import voxel_indices

_COORD_BITS = 21
_COORD_LIMIT = 1 << 20  # voxel coordinates must satisfy |c| < 2^20


def _pack(cells: np.ndarray) -> np.ndarray:
    """Pack (N, 3) int64 voxel coordinates into sortable int64 keys."""
    if cells.size and np.abs(cells).max() >= _COORD_LIMIT:
        raise ValueError(
            "voxel coordinate exceeds +/-2^20 cells; "
            "point too far from the origin for this voxel size"
        )
    shifted = cells + _COORD_LIMIT
    return (shifted[:, 0] << 42) | (shifted[:, 1] << 21) | shifted[:, 2]


class VoxelMap:
    def __init__(self, voxel_size: float, max_points_per_voxel: int, max_range: float):
        if voxel_size <= 0.0:
            raise ValueError(f"voxel size must be positive, got {voxel_size}")
        if max_points_per_voxel < 1:
            raise ValueError(f"need at least 1 point per voxel, got {max_points_per_voxel}")
        if max_range <= 0.0:
            raise ValueError(f"max range must be positive, got {max_range}")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.max_range = float(max_range)
        self._points = np.empty((0, 3), dtype=np.float64)
        self._keys = np.empty(0, dtype=np.int64)
        self._bucket_pos = np.empty(0, dtype=np.int64)
        self._counts: dict[int, int] = {}
        self._search = None  # rebuilt lazily after mutations

    # -- bookkeeping --------------------------------------------------------

    def point_count(self) -> int:
        return len(self._points)

    def voxel_count(self) -> int:
        return len(self._counts)

    def __len__(self) -> int:
        return len(self._points)

    def points(self) -> np.ndarray:
        """Copy of all stored points, oldest first."""
        return self._points.copy()

    # -- mutation ------------------------------------------------------------

    def insert(self, points) -> None:
        """Add global-frame points, respecting per-voxel capacity.

        Points are considered in input order; a point is dropped when its
        voxel already holds the maximum. Full voxels are left untouched.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return
        keys = _pack(voxel_indices(pts, self.voxel_size))
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        ends = np.r_[starts[1:], len(sk)]

        take_idx = []
        take_pos = []
        counts = self._counts
        cap = self.max_points_per_voxel
        for s, e in zip(starts, ends):
            key = int(sk[s])
            have = counts.get(key, 0)
            room = cap - have
            if room <= 0:
                continue
            take = min(room, e - s)
            take_idx.append(order[s : s + take])
            take_pos.append(np.arange(have, have + take, dtype=np.int64))
            counts[key] = have + take
        if not take_idx:
            return

        idx = np.concatenate(take_idx)
        pos = np.concatenate(take_pos)
        by_input = np.argsort(idx, kind="stable")
        idx, pos = idx[by_input], pos[by_input]
        self._points = np.concatenate([self._points, pts[idx]])
        self._keys = np.concatenate([self._keys, keys[idx]])
        self._bucket_pos = np.concatenate([self._bucket_pos, pos])
        self._search = None

    def remove_far(self, origin) -> None:
        """Delete every voxel whose first stored point is beyond max_range."""
        if len(self._points) == 0:
            return
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        first = self._bucket_pos == 0
        reps = self._points[first] - origin
        dist = np.sqrt(np.einsum("ij,ij->i", reps, reps))
        far_keys = self._keys[first][dist > self.max_range]
        if far_keys.size == 0:
            return
        far_sorted = np.sort(far_keys)
        at = np.searchsorted(far_sorted, self._keys)
        at_clipped = np.minimum(at, far_sorted.size - 1)
        is_far = (at < far_sorted.size) & (far_sorted[at_clipped] == self._keys)
        keep = ~is_far
        self._points = self._points[keep]
        self._keys = self._keys[keep]
        self._bucket_pos = self._bucket_pos[keep]
        for key in far_keys:
            del self._counts[int(key)]
        self._search = None

    # -- queries --------------------------------------------------------------

    def _search_arrays(self):
        if self._search is None:
            order = np.lexsort((self._bucket_pos, self._keys))
            sk = self._keys[order]
            starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
            self._search = (
                self._points[order],
                self._bucket_pos[order],
                sk[starts],  # unique voxel keys, ascending
                starts.astype(np.int64),
                np.diff(np.r_[starts, len(sk)]).astype(np.int64),
            )
        return self._search

    def _offset_table(self, max_dist: float):
        """Lexicographically ordered neighbor-cell offsets for a search radius.

        Cells whose closest possible point (given the query can sit anywhere
        in its own cell) is farther than max_dist are pruned.
        """
        radius = int(np.ceil(max_dist / self.voxel_size))
        rng = np.arange(-radius, radius + 1, dtype=np.int64)
        di, dj, dk = np.meshgrid(rng, rng, rng, indexing="ij")
        offs = np.stack([di.ravel(), dj.ravel(), dk.ravel()], axis=1)
        gap = np.maximum(np.abs(offs) - 1, 0) * self.voxel_size
        reachable = np.einsum("ij,ij->i", gap, gap) <= max_dist * max_dist
        offs = offs[reachable]
        # arithmetic (not bitwise) combination: offsets can be negative
        deltas = offs[:, 0] * (1 << 42) + offs[:, 1] * (1 << 21) + offs[:, 2]
        return radius, deltas

    def nearest_neighbors(self, queries, max_dist: float):
        """Nearest stored point within max_dist for each query point.

        Returns (targets (Q, 3), distances (Q,), found (Q,) bool); rows with
        found=False hold zeros/inf.
        """
        if max_dist <= 0.0:
            raise ValueError(f"max_dist must be positive, got {max_dist}")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = len(queries)
        targets = np.zeros((nq, 3))
        dists = np.full(nq, np.inf)
        found = np.zeros(nq, dtype=bool)
        if nq == 0 or len(self._points) == 0:
            return targets, dists, found

        pts, pos, uniq, starts, counts = self._search_arrays()
        radius, deltas = self._offset_table(max_dist)
        qcells = voxel_indices(queries, self.voxel_size)
        if np.abs(qcells).max() + radius >= _COORD_LIMIT:
            raise ValueError("query too far from the origin for this voxel size")
        qkeys = _pack(qcells)

        cand = (qkeys[:, None] + deltas[None, :]).ravel()
        at = np.searchsorted(uniq, cand)
        at_clipped = np.minimum(at, len(uniq) - 1)
        hit = (at < len(uniq)) & (uniq[at_clipped] == cand)
        flat = np.flatnonzero(hit)
        if flat.size == 0:
            return targets, dists, found

        vox = at[flat]
        n_off = len(deltas)
        hit_query = flat // n_off
        hit_rank = flat % n_off  # lexicographic rank of the offset

        # expand each hit voxel into its stored points
        reps = counts[vox]
        total = int(reps.sum())
        row_base = np.repeat(starts[vox], reps)
        within_group = np.arange(total) - np.repeat(np.cumsum(reps) - reps, reps)
        rows = row_base + within_group
        cq = np.repeat(hit_query, reps)
        crank = np.repeat(hit_rank, reps)

        diff = pts[rows] - queries[cq]
        d2 = np.einsum("ij,ij->i", diff, diff)
        ok = d2 <= max_dist * max_dist
        if not np.any(ok):
            return targets, dists, found
        rows, cq, crank, d2 = rows[ok], cq[ok], crank[ok], d2[ok]

        # winner per query: smallest squared distance, ties by offset rank
        # then by insertion position inside the bucket
        sel = np.lexsort((pos[rows], crank, d2, cq))
        cq_sorted = cq[sel]
        firsts = sel[np.r_[True, cq_sorted[1:] != cq_sorted[:-1]]]
        winners_q = cq[firsts]
        targets[winners_q] = pts[rows[firsts]]
        dists[winners_q] = np.sqrt(d2[firsts])
        found[winners_q] = True
        return targets, dists, found

    def nearest_neighbor(self, query, max_dist: float):
        """Nearest stored point to one query, or None if none within max_dist."""
        targets, dists, found = self.nearest_neighbors(
            np.asarray(query, dtype=np.float64).reshape(1, 3), max_dist
        )
        if not found[0]:
            return None
        return targets[0], float(dists[0])
