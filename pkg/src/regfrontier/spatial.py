"""Fixed-radius neighbor sets on planar coordinates via a uniform grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NeighborSet:
    """CSR-style neighbor lists: neighbors of i are ``index[indptr[i]:indptr[i+1]]``."""

    radius: float
    indptr: np.ndarray
    index: np.ndarray
    excluded: int = 0  # points without coordinates

    def __getitem__(self, i: int) -> np.ndarray:
        return self.index[self.indptr[i]:self.indptr[i + 1]]

    def __len__(self) -> int:
        return len(self.indptr) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def pairs(self) -> set[tuple[int, int]]:
        i = np.repeat(np.arange(len(self)), self.counts)
        return set(zip(i.tolist(), self.index.tolist()))


def build_neighbors(xy, d: float) -> NeighborSet:
    """All j != i with Euclidean distance ≤ d, for every point i.

    Points are bucketed on a grid of cell size d, so only the 3×3 block of
    cells around a point needs exact distance checks.  Rows with missing
    coordinates get no neighbors and are counted in ``excluded``.
    """
    xy = np.asarray(xy, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise ValueError("coordinates must be an (n, 2) array")
    if not d > 0:
        raise ValueError("radius must be positive")
    n = len(xy)
    ok = np.isfinite(xy).all(axis=1)
    idx_ok = np.flatnonzero(ok)
    cell = np.floor(xy[idx_ok] / d).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for p, (cx, cy) in zip(idx_ok.tolist(), cell.tolist()):
        buckets.setdefault((cx, cy), []).append(p)
    buckets_arr = {k: np.array(v, dtype=np.intp) for k, v in buckets.items()}
    d2 = d * d
    lists: list[np.ndarray] = [np.empty(0, dtype=np.intp)] * n
    for (cx, cy), members in buckets_arr.items():
        cand = [buckets_arr[(cx + a, cy + b)] for a in (-1, 0, 1) for b in (-1, 0, 1) if (cx + a, cy + b) in buckets_arr]
        cand = np.sort(np.concatenate(cand))
        diff = xy[members][:, None, :] - xy[cand][None, :, :]
        close = np.einsum("ijk,ijk->ij", diff, diff) <= d2
        for r, p in enumerate(members):
            nb = cand[close[r]]
            lists[p] = nb[nb != p]
    counts = np.array([len(v) for v in lists], dtype=np.intp)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    index = np.concatenate(lists) if n else np.empty(0, dtype=np.intp)
    return NeighborSet(float(d), indptr, index.astype(np.intp), int((~ok).sum()))


def brute_force_neighbors(xy, d: float) -> NeighborSet:
    """All-pairs reference implementation."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    diff = xy[:, None, :] - xy[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    close = dist2 <= d * d
    np.fill_diagonal(close, False)
    close &= np.isfinite(dist2)
    lists = [np.flatnonzero(close[i]) for i in range(n)]
    indptr = np.concatenate([[0], np.cumsum([len(v) for v in lists])])
    index = np.concatenate(lists) if n else np.empty(0, dtype=np.intp)
    return NeighborSet(float(d), indptr, index.astype(np.intp), int((~np.isfinite(xy).all(axis=1)).sum()))
