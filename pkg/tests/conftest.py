import numpy as np
import pytest

from reidfuse.store import FeatureSet


def make_set(features, person_ids, camera_ids, role="gallery", item_ids=None):
    """Build a FeatureSet from plain arrays with generated item ids."""
    features = np.asarray(features, dtype=np.float32)
    if item_ids is None:
        item_ids = [f"item{i:05d}" for i in range(features.shape[0])]
    return FeatureSet(item_ids, person_ids, camera_ids, features, role)


def random_gallery(rng, n, dim=8, n_cams=3, n_pids=None, role="gallery"):
    """Uniformly random features with random camera / identity labels."""
    if n_pids is None:
        n_pids = max(2, n // 4)
    features = rng.standard_normal((n, dim))
    pids = rng.integers(0, n_pids, n)
    cams = rng.integers(0, n_cams, n)
    return make_set(features, pids, cams, role=role)


def clustered_set(rng, n_ids=8, cams=3, per=2, dim=16, spread=1.0, noise=0.3,
                  role="train"):
    """Identity-clustered features: one center per identity plus noise."""
    centers = rng.normal(0.0, spread, (n_ids, dim))
    feats, pids, cam_ids = [], [], []
    for i in range(n_ids):
        for c in range(cams):
            for _ in range(per):
                feats.append(centers[i] + rng.normal(0.0, noise, dim))
                pids.append(i)
                cam_ids.append(c)
    return make_set(np.array(feats), pids, cam_ids, role=role)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)
