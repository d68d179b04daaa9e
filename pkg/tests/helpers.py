"""Small builders shared across test modules."""

from pathlib import Path

import numpy as np

from scene_cluster.clustering import ParticipantFeatures
from scene_cluster.model import Dataset, EatingOccasionRecord


def tiny_dataset(root, sizes, env_period=2):
    """Dataset whose records point at (mostly nonexistent) paths under root.

    ``sizes`` maps participant id to image count; env labels cycle every
    ``env_period`` images.  Good enough for scoring and sweep tests that
    never open the files.
    """
    root = Path(root)
    records = []
    for pid, n in sizes.items():
        for i in range(n):
            iid = f"{pid}_img{i:03d}"
            records.append(
                EatingOccasionRecord(
                    participant_id=pid,
                    image_id=iid,
                    image_path=root / f"{iid}.png",
                    mask_path=root / f"{iid}_mask.png",
                    env_label=f"e{i // env_period}",
                )
            )
    return Dataset(records=tuple(records))


def blob_features(rng, n_envs, per_env, dim=8, spread=0.05, centers_scale=4.0):
    """Well-separated gaussian blobs, one per environment.

    Returns (vectors, truth_labels) with vectors float32 shaped
    (n_envs * per_env, dim).
    """
    centers = rng.normal(scale=centers_scale, size=(n_envs, dim))
    vecs = []
    labels = []
    for e in range(n_envs):
        vecs.append(centers[e] + rng.normal(scale=spread, size=(per_env, dim)))
        labels.extend([e] * per_env)
    return np.concatenate(vecs).astype(np.float32), labels


def participant_features(rng, pid, n_envs=3, per_env=4, dim=8):
    """ParticipantFeatures with separable g and l plus truth labels."""
    g, labels = blob_features(rng, n_envs, per_env, dim=dim)
    l, _ = blob_features(rng, n_envs, per_env, dim=dim)
    ids = tuple(f"{pid}_img{i:03d}" for i in range(len(labels)))
    feats = ParticipantFeatures(
        image_ids=ids,
        g=g,
        l=l,
        baseline=rng.random((len(labels), 12)).astype(np.float32),
    )
    return feats, labels
