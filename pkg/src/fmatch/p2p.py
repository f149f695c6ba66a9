"""Pointwise maps, spectral <-> pointwise conversion and ZoomOut refinement.

A :class:`PointMap` sends every *target* vertex to a *source* vertex
(pullback convention): ``assignment[j]`` is the source vertex matched to
target vertex ``j``. That is the direction in which a functional map
``C`` (source coefficients -> target coefficients) is recovered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fmap import FmapError, FunctionalMap

_BLOCK = 256


@dataclass(frozen=True, eq=False)
class PointMap:
    assignment: np.ndarray
    source: str = "source"
    target: str = "target"

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if a.size and not np.issubdtype(a.dtype, np.integer):
            raise ValueError("assignment must contain integer indices")
        a = a.astype(np.int64)
        if a.size and a.min() < 0:
            raise ValueError("assignment contains negative indices")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def __len__(self):
        return len(self.assignment)

    def check_source_size(self, n_source):
        if len(self) and self.assignment.max() >= n_source:
            raise ValueError(
                f"assignment index {int(self.assignment.max())} out of range for {n_source} source vertices"
            )


def nearest_neighbors(points, queries):
    """Exact Euclidean nearest neighbor in ``points`` of every row of ``queries``.

    Brute force in blocks. Candidates within rounding distance of the
    block-wise minimum are re-scored with explicit differences so the result
    equals a direct scan; ties resolve to the lowest point index.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if points.ndim != 2 or queries.ndim != 2 or points.shape[1] != queries.shape[1]:
        raise ValueError(f"embedding dimensions differ: {points.shape} vs {queries.shape}")
    p_sq = np.einsum("ij,ij->i", points, points)
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), _BLOCK):
        q = queries[start : start + _BLOCK]
        q_sq = np.einsum("ij,ij->i", q, q)
        d2 = q_sq[:, None] + p_sq[None, :] - 2.0 * (q @ points.T)
        best = d2.min(axis=1)
        slack = 1e-10 * (q_sq[:, None] + p_sq[None, :]) + 1e-300
        cand_rows, cand_cols = np.nonzero(d2 <= best[:, None] + slack)
        exact = np.square(q[cand_rows] - points[cand_cols]).sum(axis=1)
        # lexsort: by row, then exact distance, then point index
        order = np.lexsort((cand_cols, exact, cand_rows))
        rows_sorted = cand_rows[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = rows_sorted[1:] != rows_sorted[:-1]
        out[start + rows_sorted[first]] = cand_cols[order][first]
    return out


def fmap_to_p2p(C, basis1, basis2):
    """Recover the pointwise map from ``C`` (``k2 x k1``, source 1 -> target 2).

    Each target vertex ``j`` goes to ``argmin_i ||(Phi2 C)_j - (Phi1)_i||``,
    with ``Phi1`` restricted to its first ``k1`` columns.
    """
    C = C.C if isinstance(C, FunctionalMap) else np.asarray(C, dtype=np.float64)
    k2, k1 = C.shape
    if k1 > basis1.k or k2 > basis2.k:
        raise FmapError(f"map of shape {C.shape} exceeds basis sizes ({basis2.k}, {basis1.k})")
    emb2 = basis2.evecs[:, :k2] @ C
    return PointMap(nearest_neighbors(basis1.evecs[:, :k1], emb2))


def p2p_to_fmap(pmap, basis1, basis2, k):
    """``C = Phi2^T M2 Pi Phi1`` at size ``k``, with ``Pi`` the 0/1 matrix of ``pmap``."""
    if k > basis1.k or k > basis2.k:
        raise FmapError(f"k={k} exceeds stored basis sizes ({basis1.k}, {basis2.k})")
    a = pmap.assignment if isinstance(pmap, PointMap) else np.asarray(pmap)
    if len(a) != basis2.n:
        raise FmapError(f"map has {len(a)} entries, target has {basis2.n} vertices")
    pulled = basis1.evecs[a, :k]
    return FunctionalMap(basis2.evecs[:, :k].T @ (basis2.mass[:, None] * pulled))


def zoomout(C_init, basis1, basis2, k_final=120, step=1, return_history=False):
    """Refine a square functional map by growing the spectral size.

    Alternates pointwise recovery and re-estimation from ``k0`` (the size of
    ``C_init``) up to ``k_final`` in increments of ``step``. Returns
    ``(C_final, PointMap)`` and, with ``return_history``, the list of
    intermediate pointwise maps.
    """
    C = C_init.C if isinstance(C_init, FunctionalMap) else np.asarray(C_init, dtype=np.float64)
    if C.shape[0] != C.shape[1]:
        raise FmapError(f"zoomout needs a square initial map, got {C.shape}")
    k = C.shape[0]
    if step < 1:
        raise FmapError("step must be >= 1")
    if not k <= k_final <= min(basis1.k, basis2.k):
        raise FmapError(
            f"need k0={k} <= k_final={k_final} <= stored basis sizes ({basis1.k}, {basis2.k})"
        )
    history = []
    pmap = fmap_to_p2p(C, basis1, basis2)
    history.append(pmap)
    while k < k_final:
        k = min(k + step, k_final)
        C = p2p_to_fmap(pmap, basis1, basis2, k).C
        pmap = fmap_to_p2p(C, basis1, basis2)
        history.append(pmap)
    result = (FunctionalMap(C), pmap)
    return result + (history,) if return_history else result
