"""Geodesic error of pointwise maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph

from .p2p import PointMap

PCK_THRESHOLDS = tuple(0.01 * t for t in range(26))


def geodesic_distances(mesh, sources=None):
    """Edge-graph shortest paths (Euclidean edge lengths) from ``sources`` to all vertices.

    Returns a ``(len(sources), n)`` array; ``sources=None`` means all vertices.
    """
    graph = mesh.adjacency()
    if sources is None:
        sources = np.arange(mesh.n_vertices)
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    dist = csgraph.dijkstra(graph, directed=False, indices=sources)
    if not np.all(np.isfinite(dist)):
        raise ValueError("mesh edge graph is disconnected; geodesic distances are undefined")
    return dist


@dataclass(frozen=True, eq=False)
class ErrorSummary:
    per_vertex_errors: np.ndarray
    mean_x100: float
    pck: tuple  # ((threshold, fraction), ...)
    pair_id: str = ""

    @property
    def mean(self):
        return float(self.per_vertex_errors.mean())


def pck_curve(errors, thresholds=PCK_THRESHOLDS):
    errors = np.asarray(errors)
    return tuple((float(t), float(np.mean(errors <= t + 1e-12))) for t in thresholds)


def evaluate_map(pmap, gt, mesh_source, pair_id="", thresholds=PCK_THRESHOLDS):
    """Per-target-vertex geodesic error on the source mesh, normalized by sqrt(area).

    Both maps send target vertices to source vertices.
    """
    pred = pmap.assignment if isinstance(pmap, PointMap) else np.asarray(pmap, dtype=np.int64)
    true = gt.assignment if isinstance(gt, PointMap) else np.asarray(gt, dtype=np.int64)
    if len(pred) != len(true):
        raise ValueError(f"predicted map has {len(pred)} entries, ground truth has {len(true)}")
    n = mesh_source.n_vertices
    for name, arr in (("predicted", pred), ("ground-truth", true)):
        if len(arr) and (arr.min() < 0 or arr.max() >= n):
            raise ValueError(f"{name} map refers to vertices outside the {n}-vertex source mesh")
    uniq, inverse = np.unique(true, return_inverse=True)
    dist = geodesic_distances(mesh_source, uniq)
    errors = dist[inverse, pred] / np.sqrt(mesh_source.total_area())
    return ErrorSummary(
        per_vertex_errors=errors,
        mean_x100=float(100.0 * errors.mean()) if len(errors) else 0.0,
        pck=pck_curve(errors, thresholds),
        pair_id=pair_id,
    )
