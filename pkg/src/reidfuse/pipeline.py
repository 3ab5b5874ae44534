"""End-to-end scoring and cross-view evaluation.

Each query-gallery pair is scored as

    score = alpha * cos(q, g) + beta * cos(q, urf_g) + gamma * same_camera

and every query's gallery is sorted by descending score with ascending
index breaking ties.  Evaluation follows the cross-view matching rule:
gallery entries sharing both the query's person_id and camera_id are
masked out of the ranked list before metrics are computed, and
distractors (negative person_id) stay ranked but are never relevant.

Metrics:

* CMC[k] is the fraction of valid queries whose first correct match
  appears within the top k+1 entries of the filtered list (cmc[0] is
  Rank@1).
* AP for one query is the mean over its relevant items of the precision
  at each item's rank; mAP averages AP over queries that have at least
  one relevant item.  Queries with none are skipped and reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import RefinedFeature
from .simkit import _sims, map_rows, normalized_rows
from .store import CombinationWeights, FeatureSet

DEFAULT_MAX_RANK = 50


@dataclass
class RankingResult:
    """One query's fully ordered gallery.

    order holds gallery indices best-first; scores is aligned with order.
    valid_mask is indexed by gallery position and is False exactly where
    the entry shares both person_id and camera_id with the query (those
    entries are masked out, not deleted, so exports keep full context).
    """

    query_index: int
    order: np.ndarray
    scores: np.ndarray
    valid_mask: np.ndarray

    @property
    def ordered_gallery(self) -> list[tuple[int, float]]:
        return list(zip(self.order.tolist(), self.scores.tolist()))


@dataclass
class EvalReport:
    """CMC curve, mAP and per-query average precisions.

    per_query_ap lists valid queries in query order; skipped_queries
    holds the indices of queries with no cross-camera match available.
    """

    cmc: np.ndarray
    map: float
    per_query_ap: list[float]
    num_valid_queries: int
    skipped_queries: list[int]
    config_echo: dict = field(default_factory=dict)


def baseline_weights() -> CombinationWeights:
    """Weights (1, 0, 0): scoring reduces to plain single-view cosine."""
    return CombinationWeights(
        alpha=1.0, beta=0.0, gamma=0.0, intercept=0.0,
        k_used=0, n_used=0, seed=0, run_index=0,
    )


def combined_score(
    s_single: float, s_refined: float, cce_value: float, weights: CombinationWeights
) -> float:
    """Weighted combination of the three measures; intercept never added."""
    return (
        weights.alpha * s_single
        + weights.beta * s_refined
        + weights.gamma * cce_value
    )


def rank_all(
    queries: FeatureSet,
    gallery: FeatureSet,
    urfs: list[RefinedFeature] | None,
    weights: CombinationWeights,
    threads: int = 1,
) -> list[RankingResult]:
    """Score and sort the gallery for every query.

    urfs must align with gallery indices.  Passing None is allowed only
    when weights.beta == 0 (the refined-similarity term is unused); the
    baseline path takes that form.
    """
    if queries.dim != gallery.dim:
        raise ValueError(
            f"dimension mismatch: queries d={queries.dim}, gallery d={gallery.dim}"
        )
    if urfs is None:
        if weights.beta != 0.0:
            raise ValueError(
                "refined-feature weight beta is nonzero but no refined "
                "features were given"
            )
        refined_normalized = None
    else:
        if len(urfs) != len(gallery):
            raise ValueError(
                f"refined features misaligned: {len(urfs)} entries for "
                f"{len(gallery)} gallery items"
            )
        matrix = np.vstack([r.vector for r in urfs]).astype(np.float64)
        if matrix.shape[1] != gallery.dim:
            raise ValueError(
                f"refined feature dimension {matrix.shape[1]} does not "
                f"match gallery dimension {gallery.dim}"
            )
        refined_normalized = normalized_rows(matrix, "refined feature")

    query_normalized = normalized_rows(queries.features, "query")
    gallery_normalized = normalized_rows(gallery.features, "gallery")
    gallery_indices = np.arange(len(gallery))
    g_pids = gallery.person_ids
    g_cams = gallery.camera_ids
    q_pids = queries.person_ids
    q_cams = queries.camera_ids

    def rank_one(i: int) -> RankingResult:
        row = query_normalized[i]
        scores = weights.alpha * _sims(gallery_normalized, row)
        if refined_normalized is not None:
            scores = scores + weights.beta * _sims(refined_normalized, row)
        same_camera = (g_cams == q_cams[i]).astype(np.float64)
        scores = scores + weights.gamma * same_camera
        order = np.lexsort((gallery_indices, -scores))
        valid = ~((g_pids == q_pids[i]) & (g_cams == q_cams[i]))
        return RankingResult(
            query_index=i, order=order, scores=scores[order], valid_mask=valid
        )

    return map_rows(rank_one, len(queries), threads)


def evaluate(
    rankings: list[RankingResult],
    queries: FeatureSet,
    gallery: FeatureSet,
    max_rank: int = DEFAULT_MAX_RANK,
    config_echo: dict | None = None,
) -> EvalReport:
    """Compute CMC and mAP over the given rankings (see module docstring)."""
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    g_pids = gallery.person_ids
    g_cams = gallery.camera_ids
    first_match_counts = np.zeros(max_rank, dtype=np.float64)
    per_query_ap: list[float] = []
    skipped: list[int] = []
    for ranking in rankings:
        i = ranking.query_index
        q_pid = int(queries.person_ids[i])
        q_cam = int(queries.camera_ids[i])
        filtered = ranking.order[ranking.valid_mask[ranking.order]]
        relevant = (
            (g_pids[filtered] == q_pid)
            & (g_cams[filtered] != q_cam)
            & (g_pids[filtered] >= 0)
        )
        if q_pid < 0 or not relevant.any():
            skipped.append(i)
            continue
        positions = np.flatnonzero(relevant)
        if positions[0] < max_rank:
            first_match_counts[positions[0]] += 1.0
        precisions = np.arange(1, positions.size + 1) / (positions + 1.0)
        per_query_ap.append(float(precisions.mean()))
    num_valid = len(per_query_ap)
    if num_valid:
        cmc = first_match_counts.cumsum() / num_valid
        mean_ap = float(np.mean(per_query_ap))
    else:
        cmc = np.zeros(max_rank, dtype=np.float64)
        mean_ap = 0.0
    return EvalReport(
        cmc=cmc,
        map=mean_ap,
        per_query_ap=per_query_ap,
        num_valid_queries=num_valid,
        skipped_queries=skipped,
        config_echo=dict(config_echo or {}),
    )
