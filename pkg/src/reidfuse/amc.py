"""Weight learning for the combined similarity measure.

Training data comes from randomly sampled (anchor, positive, negative)
triples over a labeled feature set.  Each triple contributes two rows:

    [cos(f_a, f_p), cos(f_a, rf_p), same_camera(a, p)] -> +1
    [cos(f_a, f_n), cos(f_a, rf_n), same_camera(a, n)] -> -1

where rf_x is the label-guided refined feature of x (see fusion.cffm_fuse)
built with the same K used for gallery fusion.  Ordinary least squares
then fits label ~ measures + intercept; the three slopes become the
scoring weights and the intercept is recorded but never applied.

Randomness comes from numpy's PCG64 generator, so a fixed seed reproduces
the exact triplet sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fusion import cffm_fuse
from .simkit import cosine
from .store import CombinationWeights, FeatureSet

RIDGE_LAMBDA = 1e-8


@dataclass
class MeasureVector:
    """One regression row: the three measures and its class label."""

    s_single: float
    s_refined: float
    cce: int
    label: int


@dataclass
class TripletDataset:
    """2n measure rows (n per label) plus the sampling provenance."""

    rows: list[MeasureVector]
    seed: int
    n: int
    k: int


@dataclass
class RepeatedFit:
    """Aggregate of several independently seeded fits.

    std holds the population standard deviation of (alpha, beta, gamma,
    intercept) across runs.
    """

    mean: CombinationWeights
    runs: list[CombinationWeights]
    std: np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator used for all triplet sampling."""
    return np.random.Generator(np.random.PCG64(seed))


def cce(a, b) -> int:
    """Camera-equality indicator: 1 when both records share a camera."""
    return 1 if a.camera_id == b.camera_id else 0


def _labeled_structure(train: FeatureSet):
    pids = train.person_ids
    labeled = pids >= 0
    if not labeled.any():
        raise ValueError("triplet sampling needs labeled images; none found")
    labeled_pids = pids[labeled]
    unique, counts = np.unique(labeled_pids, return_counts=True)
    if unique.size < 2:
        raise ValueError(
            f"triplet sampling needs at least two labeled identities; "
            f"found {unique.size}"
        )
    multi = unique[counts >= 2]
    if multi.size == 0:
        raise ValueError(
            "triplet sampling needs an identity with at least two images; "
            "every labeled identity has exactly one"
        )
    anchors = np.flatnonzero(labeled & np.isin(pids, multi))
    return labeled, anchors


def sample_triplet(train: FeatureSet, rng: np.random.Generator):
    """Draw (anchor, positive, negative) record indices.

    The anchor is uniform over labeled images whose identity has another
    image; the positive is uniform over that identity's other images; the
    negative is uniform over labeled images of any other identity.  A set
    whose identity structure cannot supply all three raises with a
    description of the deficiency.
    """
    labeled, anchors = _labeled_structure(train)
    pids = train.person_ids
    indices = np.arange(len(train))
    anchor = int(anchors[rng.integers(anchors.size)])
    positives = np.flatnonzero((pids == pids[anchor]) & (indices != anchor))
    positive = int(positives[rng.integers(positives.size)])
    negatives = np.flatnonzero(labeled & (pids != pids[anchor]))
    negative = int(negatives[rng.integers(negatives.size)])
    return anchor, positive, negative


def build_triplet_dataset(
    train: FeatureSet, n: int, k: int, seed: int
) -> TripletDataset:
    """Sample n triples and emit their 2n measure rows in step order.

    Each step appends the positive row then the negative row; refined
    features are computed with cffm_fuse at the same k.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = make_rng(seed)
    refined_cache: dict[int, np.ndarray] = {}

    def refined(index: int) -> np.ndarray:
        if index not in refined_cache:
            refined_cache[index] = cffm_fuse(train, index, k).vector
        return refined_cache[index]

    rows: list[MeasureVector] = []
    for _ in range(n):
        anchor, positive, negative = sample_triplet(train, rng)
        f_anchor = train.features[anchor].astype(np.float64)
        rec_anchor = train.record(anchor)
        for other, label in ((positive, 1), (negative, -1)):
            f_other = train.features[other].astype(np.float64)
            rows.append(
                MeasureVector(
                    s_single=cosine(f_anchor, f_other),
                    s_refined=cosine(f_anchor, refined(other)),
                    cce=cce(rec_anchor, train.record(other)),
                    label=label,
                )
            )
    return TripletDataset(rows=rows, seed=seed, n=n, k=k)


def fit_weights(data: TripletDataset) -> CombinationWeights:
    """Ordinary least squares of label ~ measures via normal equations.

    A rank-deficient design (e.g. a constant camera-indicator column)
    falls back to a ridge solve with RIDGE_LAMBDA and sets the ridge flag.
    """
    if len(data.rows) < 4:
        raise ValueError(
            f"need at least 4 rows to fit 4 coefficients, got {len(data.rows)}"
        )
    design = np.array(
        [[r.s_single, r.s_refined, float(r.cce), 1.0] for r in data.rows],
        dtype=np.float64,
    )
    labels = np.array([float(r.label) for r in data.rows], dtype=np.float64)
    gram = design.T @ design
    moment = design.T @ labels
    ridge = bool(np.linalg.matrix_rank(design) < design.shape[1])
    if ridge:
        gram = gram + RIDGE_LAMBDA * np.eye(design.shape[1])
    coefficients = np.linalg.solve(gram, moment)
    return CombinationWeights(
        alpha=float(coefficients[0]),
        beta=float(coefficients[1]),
        gamma=float(coefficients[2]),
        intercept=float(coefficients[3]),
        k_used=data.k,
        n_used=data.n,
        seed=data.seed,
        run_index=0,
        ridge=ridge,
    )


def fit_weights_repeated(
    train: FeatureSet, n: int, k: int, base_seed: int, repeats: int = 5
) -> RepeatedFit:
    """Re-run sampling + fitting with seeds base_seed..base_seed+repeats-1.

    The aggregate carries the coefficient means, seed=base_seed and
    run_index=-1; scoring normally uses the aggregate.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    runs: list[CombinationWeights] = []
    for r in range(repeats):
        fitted = fit_weights(build_triplet_dataset(train, n, k, base_seed + r))
        runs.append(replace(fitted, run_index=r))
    coefficients = np.array(
        [[w.alpha, w.beta, w.gamma, w.intercept] for w in runs], dtype=np.float64
    )
    means = coefficients.mean(axis=0)
    std = coefficients.std(axis=0)
    mean_weights = CombinationWeights(
        alpha=float(means[0]),
        beta=float(means[1]),
        gamma=float(means[2]),
        intercept=float(means[3]),
        k_used=k,
        n_used=n,
        seed=base_seed,
        run_index=-1,
        ridge=any(w.ridge for w in runs),
    )
    return RepeatedFit(mean=mean_weights, runs=runs, std=std)
