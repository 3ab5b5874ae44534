import math
from collections import Counter

import numpy as np
import pytest

from reidfuse.amc import (
    MeasureVector,
    TripletDataset,
    build_triplet_dataset,
    cce,
    fit_weights,
    fit_weights_repeated,
    make_rng,
    sample_triplet,
)
from reidfuse.store import FeatureRecord

from conftest import clustered_set, make_set

from test_fusion import oracle_cffm
from test_simkit import oracle_cosine


def _record(camera_id, person_id=0):
    return FeatureRecord(
        item_id="x", person_id=person_id, camera_id=camera_id,
        feature=np.zeros(2),
    )


def oracle_replay(train, n, k, seed):
    """Step-by-step replay of dataset generation with independent math.

    Shares the RNG construction (PCG64 + the same draw order) but
    recomputes pools, cosines and refined features from scratch.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    pids = [int(p) for p in train.person_ids]
    cams = [int(c) for c in train.camera_ids]
    total = len(train)
    labeled = [i for i in range(total) if pids[i] >= 0]
    counts = Counter(pids[i] for i in labeled)
    multi = {p for p, c in counts.items() if c >= 2}
    anchors = [i for i in labeled if pids[i] in multi]
    rows = []
    for _ in range(n):
        a = anchors[int(rng.integers(len(anchors)))]
        positives = [j for j in range(total) if pids[j] == pids[a] and j != a]
        p = positives[int(rng.integers(len(positives)))]
        negatives = [j for j in labeled if pids[j] != pids[a]]
        g = negatives[int(rng.integers(len(negatives)))]
        for other, label in ((p, 1), (g, -1)):
            refined = oracle_cffm(train, other, k)
            rows.append((
                oracle_cosine(train.features[a], train.features[other]),
                oracle_cosine(train.features[a], refined),
                1 if cams[a] == cams[other] else 0,
                label,
            ))
    return rows


class TestCce:
    def test_same_camera(self):
        assert cce(_record(0), _record(0)) == 1

    def test_different_camera(self):
        assert cce(_record(0), _record(1)) == 0

    def test_self(self):
        rec = _record(3)
        assert cce(rec, rec) == 1


class TestSampleTriplet:
    def test_forced_pools(self):
        # person 7 has two images, person 8 has one: the anchor must come
        # from person 7, the positive is its other image, the negative is
        # the person-8 image
        train = make_set(
            [[1, 0], [0.9, 0.1], [0, 1]], [7, 7, 8], [0, 1, 0], role="train"
        )
        rng = make_rng(0)
        for _ in range(25):
            a, p, n = sample_triplet(train, rng)
            assert a in (0, 1)
            assert p == 1 - a
            assert n == 2

    def test_deterministic_sequence(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        seq1 = [sample_triplet(train, make_rng(42)) for _ in range(1)]
        rng_a, rng_b = make_rng(123), make_rng(123)
        seq_a = [sample_triplet(train, rng_a) for _ in range(50)]
        seq_b = [sample_triplet(train, rng_b) for _ in range(50)]
        assert seq_a == seq_b
        assert seq1 == [sample_triplet(train, make_rng(42))]

    def test_identity_constraints_hold(self, rng):
        train = clustered_set(rng, n_ids=6, cams=3, per=2)
        sampler = make_rng(7)
        for _ in range(300):
            a, p, n = sample_triplet(train, sampler)
            assert train.person_ids[a] == train.person_ids[p]
            assert a != p
            assert train.person_ids[a] != train.person_ids[n]

    def test_anchor_uniform_over_images(self):
        # balanced set: 10 identities x 4 images; identity anchor counts
        # should stay within 3 sigma of the binomial expectation
        rng = np.random.default_rng(3)
        train = clustered_set(rng, n_ids=10, cams=2, per=2)
        sampler = make_rng(99)
        draws = 10_000
        counts = Counter()
        for _ in range(draws):
            a, _, _ = sample_triplet(train, sampler)
            counts[int(train.person_ids[a])] += 1
        p = 4 / len(train)
        sigma = math.sqrt(draws * p * (1 - p))
        for identity in range(10):
            assert abs(counts[identity] - draws * p) <= 3 * sigma

    def test_single_identity_error(self):
        train = make_set([[1, 0], [0, 1]], [3, 3], [0, 1], role="train")
        with pytest.raises(ValueError, match="two labeled identities"):
            sample_triplet(train, make_rng(0))

    def test_all_singletons_error(self):
        train = make_set([[1, 0], [0, 1]], [1, 2], [0, 1], role="train")
        with pytest.raises(ValueError, match="at least two images"):
            sample_triplet(train, make_rng(0))

    def test_unlabeled_only_error(self):
        train = make_set([[1, 0], [0, 1]], [-1, -2], [0, 1], role="train")
        with pytest.raises(ValueError, match="labeled"):
            sample_triplet(train, make_rng(0))

    def test_distractors_never_sampled(self, rng):
        feats = rng.standard_normal((8, 4))
        pids = [0, 0, 1, 1, -1, -1, 2, 2]
        train = make_set(feats, pids, [0, 1] * 4, role="train")
        sampler = make_rng(5)
        for _ in range(200):
            triple = sample_triplet(train, sampler)
            assert all(train.person_ids[i] >= 0 for i in triple)


class TestBuildTripletDataset:
    def test_row_count_and_balance(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        data = build_triplet_dataset(train, 5, 2, seed=11)
        assert len(data.rows) == 10
        labels = [r.label for r in data.rows]
        assert labels.count(1) == 5
        assert labels.count(-1) == 5
        # step order: positive row, then negative row
        assert labels == [1, -1] * 5

    def test_identical_anchor_positive(self):
        # both person-1 images are the same vector, so every person-1
        # positive row is (1.0, 1.0, cce, +1)
        train = make_set(
            [[0.5, 0.5], [0.5, 0.5], [-1, 0.2], [0.3, -1]],
            [1, 1, 2, 2], [0, 1, 0, 1], role="train",
        )
        data = build_triplet_dataset(train, 20, 2, seed=3)
        positive_rows = [
            r for r in data.rows if r.label == 1 and r.s_single > 0.999
        ]
        assert positive_rows
        for row in positive_rows:
            assert row.s_single == pytest.approx(1.0, abs=1e-9)
            assert row.s_refined == pytest.approx(1.0, abs=1e-9)
            assert row.cce == 0

    def test_matches_replay_oracle(self, rng):
        train = clustered_set(rng, n_ids=6, cams=3, per=2, dim=8)
        data = build_triplet_dataset(train, 40, 3, seed=123)
        expected = oracle_replay(train, 40, 3, seed=123)
        assert len(data.rows) == len(expected)
        for row, (s1, s2, c, label) in zip(data.rows, expected):
            assert row.s_single == pytest.approx(s1, abs=1e-12)
            assert row.s_refined == pytest.approx(s2, abs=1e-12)
            assert row.cce == c
            assert row.label == label

    def test_bit_identical_across_runs(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        a = build_triplet_dataset(train, 30, 2, seed=9)
        b = build_triplet_dataset(train, 30, 2, seed=9)
        assert a == b

    def test_validates_args(self, rng):
        train = clustered_set(rng, n_ids=3, cams=2, per=2)
        with pytest.raises(ValueError):
            build_triplet_dataset(train, 0, 2, seed=0)
        with pytest.raises(ValueError):
            build_triplet_dataset(train, 5, 0, seed=0)


def _dataset_from_rows(rows):
    return TripletDataset(rows=rows, seed=0, n=len(rows) // 2, k=1)


class TestFitWeights:
    def test_exact_recovery(self):
        # noiseless targets from a known linear rule with zero intercept;
        # the solver sees the rule's value through the label slot
        rng = np.random.default_rng(5)
        rows = []
        for _ in range(50):
            s1 = float(rng.uniform(-1, 1))
            s2 = float(rng.uniform(-1, 1))
            c = int(rng.integers(0, 2))
            rows.append(MeasureVector(s1, s2, c, 0.3 * s1 + 0.6 * s2 + 0.1 * c))
        fitted = fit_weights(_dataset_from_rows(rows))
        assert fitted.alpha == pytest.approx(0.3, abs=1e-6)
        assert fitted.beta == pytest.approx(0.6, abs=1e-6)
        assert fitted.gamma == pytest.approx(0.1, abs=1e-6)
        assert fitted.intercept == pytest.approx(0.0, abs=1e-6)
        assert not fitted.ridge

    def test_matches_lstsq_oracle(self):
        rng = np.random.default_rng(8)
        rows = [
            MeasureVector(
                float(rng.uniform(-1, 1)),
                float(rng.uniform(-1, 1)),
                int(rng.integers(0, 2)),
                int(rng.choice([-1, 1])),
            )
            for _ in range(800)
        ]
        fitted = fit_weights(_dataset_from_rows(rows))
        design = np.array(
            [[r.s_single, r.s_refined, r.cce, 1.0] for r in rows]
        )
        labels = np.array([float(r.label) for r in rows])
        expected, *_ = np.linalg.lstsq(design, labels, rcond=None)
        got = [fitted.alpha, fitted.beta, fitted.gamma, fitted.intercept]
        np.testing.assert_allclose(got, expected, atol=1e-8)

    def test_constant_column_takes_ridge_path(self):
        rng = np.random.default_rng(2)
        rows = [
            MeasureVector(
                float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                1, int(rng.choice([-1, 1])),
            )
            for _ in range(60)
        ]
        fitted = fit_weights(_dataset_from_rows(rows))
        assert fitted.ridge
        for value in (fitted.alpha, fitted.beta, fitted.gamma, fitted.intercept):
            assert math.isfinite(value)

    def test_local_optimality(self):
        rng = np.random.default_rng(13)
        rows = [
            MeasureVector(
                float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                int(rng.integers(0, 2)), int(rng.choice([-1, 1])),
            )
            for _ in range(200)
        ]
        fitted = fit_weights(_dataset_from_rows(rows))
        design = np.array(
            [[r.s_single, r.s_refined, r.cce, 1.0] for r in rows]
        )
        labels = np.array([float(r.label) for r in rows])
        best = np.array(
            [fitted.alpha, fitted.beta, fitted.gamma, fitted.intercept]
        )

        def ssr(w):
            residual = design @ w - labels
            return float(residual @ residual)

        base = ssr(best)
        for i in range(4):
            for delta in (1e-3, -1e-3):
                perturbed = best.copy()
                perturbed[i] += delta
                assert ssr(perturbed) >= base

    def test_too_few_rows(self):
        rows = [MeasureVector(0.1, 0.2, 0, 1)] * 3
        with pytest.raises(ValueError, match="at least 4"):
            fit_weights(_dataset_from_rows(rows))

    def test_provenance_carried(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        data = build_triplet_dataset(train, 25, 3, seed=77)
        fitted = fit_weights(data)
        assert fitted.k_used == 3
        assert fitted.n_used == 25
        assert fitted.seed == 77


class TestFitWeightsRepeated:
    def test_single_repeat_equals_run(self, rng):
        train = clustered_set(rng, n_ids=6, cams=2, per=2)
        result = fit_weights_repeated(train, 50, 2, base_seed=4, repeats=1)
        only = result.runs[0]
        assert result.mean.alpha == only.alpha
        assert result.mean.beta == only.beta
        assert result.mean.gamma == only.gamma
        assert result.mean.intercept == only.intercept
        np.testing.assert_array_equal(result.std, np.zeros(4))

    def test_deterministic(self, rng):
        train = clustered_set(rng, n_ids=6, cams=2, per=2)
        a = fit_weights_repeated(train, 40, 2, base_seed=10, repeats=3)
        b = fit_weights_repeated(train, 40, 2, base_seed=10, repeats=3)
        assert a.mean == b.mean
        assert a.runs == b.runs
        np.testing.assert_array_equal(a.std, b.std)

    def test_resampling_variance(self, rng):
        train = clustered_set(rng, n_ids=8, cams=3, per=2, noise=0.6)
        result = fit_weights_repeated(train, 60, 3, base_seed=0, repeats=5)
        coef_sets = {
            (w.alpha, w.beta, w.gamma, w.intercept) for w in result.runs
        }
        assert len(coef_sets) > 1
        assert result.std.max() > 0

    def test_run_metadata(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        result = fit_weights_repeated(train, 30, 2, base_seed=100, repeats=3)
        assert [w.run_index for w in result.runs] == [0, 1, 2]
        assert [w.seed for w in result.runs] == [100, 101, 102]
        assert result.mean.run_index == -1
        assert result.mean.seed == 100
        assert result.mean.alpha == pytest.approx(
            np.mean([w.alpha for w in result.runs])
        )

    def test_invalid_repeats(self, rng):
        train = clustered_set(rng, n_ids=5, cams=2, per=2)
        with pytest.raises(ValueError):
            fit_weights_repeated(train, 10, 2, base_seed=0, repeats=0)
