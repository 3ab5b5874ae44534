"""Multi-view feature construction by neighbor fusion.

Two fusion modes over an immutable feature set:

* URF (label-free): rebuild item j as the similarity-weighted sum of its
  K nearest cross-camera neighbors,

      urf_j = sum_k w_k * f_k,   w_k = cos(f_j, f_k) / sum_i cos(f_j, f_i)

  Negative similarities keep their sign, so a weight can be negative and
  subtract an opposing neighbor's contribution.  When no cross-camera
  neighbor exists, or the weight denominator is smaller than
  DENOMINATOR_GUARD in magnitude, the item's own vector is returned
  unchanged.

* RF (label-guided): average, with uniform weight, the K same-identity
  features most similar to the target.  Cross-camera candidates are
  preferred; the same-camera pool is used only when no cross-camera
  same-identity image exists.

Fused vectors are float64 and are not renormalized; downstream cosine
scoring is scale-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simkit import _select_cross_camera, _sims, map_rows, normalized_rows
from .store import FeatureSet

DENOMINATOR_GUARD = 1e-6


@dataclass
class RefinedFeature:
    """A fused multi-view vector and the items that contributed to it."""

    source_index: int
    vector: np.ndarray
    kind: str  # "URF" (label-free) or "RF" (label-guided)
    contributors: list[tuple[int, float]]


def _own_vector(gallery: FeatureSet, index: int, kind: str) -> RefinedFeature:
    return RefinedFeature(
        source_index=index,
        vector=gallery.features[index].astype(np.float64),
        kind=kind,
        contributors=[],
    )


def _fuse_from_sims(
    gallery: FeatureSet, sims: np.ndarray, target_index: int, k: int
) -> RefinedFeature:
    selected = _select_cross_camera(sims, gallery.camera_ids, target_index, k)
    if selected.size == 0:
        return _own_vector(gallery, target_index, "URF")
    raw = sims[selected]
    denominator = float(raw.sum())
    if abs(denominator) < DENOMINATOR_GUARD:
        return _own_vector(gallery, target_index, "URF")
    weights = raw / denominator
    vector = weights @ gallery.features[selected].astype(np.float64)
    return RefinedFeature(
        source_index=target_index,
        vector=vector,
        kind="URF",
        contributors=[(int(i), float(w)) for i, w in zip(selected, weights)],
    )


def uffm_fuse(gallery: FeatureSet, target_index: int, k: int) -> RefinedFeature:
    """Label-free fused vector for one gallery item."""
    if not 0 <= target_index < len(gallery):
        raise IndexError(
            f"target index {target_index} out of range [0, {len(gallery)})"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    base = normalized_rows(gallery.features, "gallery")
    return _fuse_from_sims(gallery, _sims(base, base[target_index]), target_index, k)


def uffm_fuse_all(
    gallery: FeatureSet, k: int, threads: int = 1
) -> list[RefinedFeature]:
    """Label-free fused vectors for every gallery item, in gallery order.

    Element j is identical to uffm_fuse(gallery, j, k).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    base = normalized_rows(gallery.features, "gallery")

    def fuse_one(j: int) -> RefinedFeature:
        return _fuse_from_sims(gallery, _sims(base, base[j]), j, k)

    return map_rows(fuse_one, len(gallery), threads)


def cffm_fuse(train: FeatureSet, target_index: int, k: int) -> RefinedFeature:
    """Label-guided fused vector for one item of a labeled set.

    The candidate pool shares the target's person_id and excludes the
    target itself; only the distractor-free case is defined.  Returns the
    target's own vector when the pool is empty (singleton identity).
    """
    if not 0 <= target_index < len(train):
        raise IndexError(
            f"target index {target_index} out of range [0, {len(train)})"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pids = train.person_ids
    if pids[target_index] < 0:
        raise ValueError(
            f"item {target_index} has negative person_id; "
            "distractors cannot be label-refined"
        )
    indices = np.arange(len(train))
    pool = np.flatnonzero((pids == pids[target_index]) & (indices != target_index))
    cross = pool[train.camera_ids[pool] != train.camera_ids[target_index]]
    if cross.size:
        pool = cross
    if pool.size == 0:
        return _own_vector(train, target_index, "RF")
    base = normalized_rows(train.features, "train")
    sims = _sims(base, base[target_index])
    order = np.lexsort((pool, -sims[pool]))
    selected = pool[order[:k]]
    share = 1.0 / selected.size
    vector = train.features[selected].astype(np.float64).mean(axis=0)
    return RefinedFeature(
        source_index=target_index,
        vector=vector,
        kind="RF",
        contributors=[(int(i), share) for i in selected],
    )
