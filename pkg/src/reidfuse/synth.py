"""Deterministic synthetic embeddings with controllable view bias.

Each identity gets a random center; each camera gets a fixed offset along
one of a set of mutually orthogonal random directions, so images taken by
the same camera share a systematic shift.  An image is then

    center(identity) + offset(camera) + per-image noise.

Identities are split half to the training set and half to the test set;
within the test set the first image of every (identity, camera) cell
becomes a query and the remaining images go to the gallery, which
guarantees every query a same-identity different-camera gallery match.

The default configuration is the documented desk-scale benchmark setting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import FeatureSet


@dataclass
class SynthConfig:
    num_identities: int = 50
    cams: int = 4
    images_per_id_per_cam: int = 3
    dim: int = 64
    identity_spread: float = 0.25
    camera_bias_scale: float = 1.5
    noise_scale: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_identities", "cams", "images_per_id_per_cam", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("identity_spread", "camera_bias_scale", "noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.cams < 2:
            raise ValueError(
                "cams must be >= 2: a single camera cannot guarantee "
                "cross-camera matches"
            )
        if self.images_per_id_per_cam < 2:
            raise ValueError(
                "images_per_id_per_cam must be >= 2: with one image per "
                "(identity, camera) the gallery cannot guarantee "
                "cross-camera matches"
            )
        if self.num_identities < 2:
            raise ValueError(
                "num_identities must be >= 2 to populate both the train "
                "and test splits"
            )
        if self.cams > self.dim:
            raise ValueError(
                f"cams ({self.cams}) cannot exceed dim ({self.dim}); camera "
                "offsets are mutually orthogonal directions"
            )


def generate(config: SynthConfig) -> tuple[FeatureSet, FeatureSet, FeatureSet]:
    """Generate (train, queries, gallery); fully deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    ids, cams, per = config.num_identities, config.cams, config.images_per_id_per_cam

    centers = rng.normal(0.0, config.identity_spread, (ids, config.dim))
    directions = rng.normal(0.0, 1.0, (cams, config.dim))
    q, _ = np.linalg.qr(directions.T)
    offsets = q.T[:cams] * config.camera_bias_scale
    noise = rng.normal(0.0, config.noise_scale, (ids, cams, per, config.dim))
    images = (
        centers[:, None, None, :] + offsets[None, :, None, :] + noise
    )

    permutation = rng.permutation(ids)
    train_ids = np.sort(permutation[: ids // 2])
    test_ids = np.sort(permutation[ids // 2:])

    def build(identity_list, selector, role_tag) -> FeatureSet:
        feats, item_ids, pids, cam_ids = [], [], [], []
        for identity in identity_list:
            for cam in range(cams):
                for m in selector:
                    feats.append(images[identity, cam, m])
                    item_ids.append(f"p{identity:04d}_c{cam}_{m:02d}")
                    pids.append(int(identity))
                    cam_ids.append(cam)
        return FeatureSet(item_ids, pids, cam_ids, np.array(feats), role_tag)

    train = build(train_ids, range(per), "train")
    queries = build(test_ids, [0], "query")
    gallery = build(test_ids, range(1, per), "gallery")
    return train, queries, gallery
