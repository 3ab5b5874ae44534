"""Cosine similarity primitives and camera-constrained nearest neighbors.

All similarities are computed in float64 regardless of storage precision.
Row similarities always go through the same (1, d) @ (d, n) kernel so that
single-target and batched call paths, and any level of thread fan-out,
produce bitwise identical values.  Ties are broken by ascending index
everywhere.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .store import FeatureSet

# Rows handed to one worker task; fixed so results never depend on the
# thread count.
_CHUNK = 64


@dataclass
class NeighborList:
    """Nearest cross-camera neighbors of one gallery item, best first."""

    target_index: int
    neighbors: list[tuple[int, float]]


def cosine(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise ValueError(f"dimension mismatch: {av.shape[0]} vs {bv.shape[0]}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero-norm vector")
    return float(np.dot(av, bv) / (na * nb))


def normalized_rows(features, what: str = "feature") -> np.ndarray:
    """Return float64 unit rows; raises naming the row for zero norms."""
    mat = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"zero-norm {what} vector at row {bad[0]}")
    return mat / norms[:, None]


def _sims(base_normalized: np.ndarray, target_row: np.ndarray) -> np.ndarray:
    # The one similarity kernel; see module docstring.
    return (target_row[None, :] @ base_normalized.T)[0]


def map_rows(worker, count: int, threads: int = 1) -> list:
    """Apply worker(i) for i in range(count), optionally across threads.

    Output order matches input order; chunk boundaries are fixed so the
    result is identical for any thread count.
    """
    if threads <= 1 or count <= _CHUNK:
        return [worker(i) for i in range(count)]
    spans = [(s, min(s + _CHUNK, count)) for s in range(0, count, _CHUNK)]

    def run(span):
        return [worker(i) for i in range(span[0], span[1])]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(run, spans))
    return [item for part in parts for item in part]


def _select_cross_camera(sims, camera_ids, target_index, k) -> np.ndarray:
    """Indices of the top-k eligible entries: different camera, best
    similarity first, ties by ascending index."""
    eligible = np.flatnonzero(camera_ids != camera_ids[target_index])
    if eligible.size == 0:
        return eligible
    order = np.lexsort((eligible, -sims[eligible]))
    return eligible[order[:k]]


def knn_cross_camera(gallery: FeatureSet, target_index: int, k: int) -> NeighborList:
    """Up to k most cosine-similar gallery items captured by a different
    camera than the target.

    Returns fewer than k entries when fewer are eligible, and an empty
    list when the target's camera covers the whole gallery.
    """
    if not 0 <= target_index < len(gallery):
        raise IndexError(
            f"target index {target_index} out of range [0, {len(gallery)})"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    base = normalized_rows(gallery.features, "gallery")
    sims = _sims(base, base[target_index])
    selected = _select_cross_camera(sims, gallery.camera_ids, target_index, k)
    return NeighborList(
        target_index=target_index,
        neighbors=[(int(i), float(sims[i])) for i in selected],
    )


def similarity_matrix(
    queries: FeatureSet, gallery: FeatureSet, threads: int = 1
) -> np.ndarray:
    """Pairwise cosine matrix, entry (i, j) = cosine(query i, gallery j)."""
    if queries.dim != gallery.dim:
        raise ValueError(
            f"dimension mismatch: queries d={queries.dim}, gallery d={gallery.dim}"
        )
    qn = normalized_rows(queries.features, "query")
    gn = normalized_rows(gallery.features, "gallery")
    rows = map_rows(lambda i: _sims(gn, qn[i]), len(queries), threads)
    return np.vstack(rows) if rows else np.empty((0, len(gallery)))
