"""Class-imbalance correction: proportional penalty weights and SMOTE.

Two remedies are offered for the heavily skewed label distribution that
sliding-window labeling produces (one sample per offset class per year vs.
dozens of "far away" samples): per-class penalty weights w_j = n / (k * n_j)
for cost-sensitive training, and SMOTE oversampling that raises every class
to the majority count by interpolating along same-class neighbor segments.
Oversampling is meant for training folds only; evaluation data must stay
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, WindowSample


@dataclass(frozen=True)
class ClassWeights:
    weights: dict[int, float]


def class_weights(class_counts: dict[int, int]) -> ClassWeights:
    """Penalty weight per class: w_j = n / (k * n_j).

    n is the total sample count and k the number of distinct classes present,
    so balanced counts give every class weight 1 and the weighted counts sum
    back to n. A zero count leaves the weight undefined and is an error.
    """
    if not class_counts:
        raise ValueError("empty class counts")
    for cls, count in class_counts.items():
        if count <= 0:
            raise ValueError(f"class {cls} has count {count}; weight undefined")
    n = sum(class_counts.values())
    k = len(class_counts)
    return ClassWeights(
        weights={cls: n / (k * count) for cls, count in sorted(class_counts.items())}
    )


def smote_oversample(dataset: Dataset, rng_seed: int, n_neighbors: int = 5) -> Dataset:
    """Raise every class count to the majority count with SMOTE synthetics.

    Each synthetic point is x_i + u * (x_nn - x_i) for a uniform u in [0, 1],
    where x_nn is one of the n_neighbors nearest same-class originals
    (Euclidean, unscaled). Originals are kept unchanged and synthetics are
    appended class by class, so the output is deterministic for a given seed.
    Synthetic samples carry the year/anchor of their interpolation source.
    """
    if n_neighbors < 1:
        raise ValueError(f"n_neighbors must be >= 1, got {n_neighbors}")
    if not dataset.samples:
        raise ValueError("cannot oversample an empty dataset")
    target = max(dataset.class_counts.values())
    rng = np.random.default_rng(rng_seed)

    by_class: dict[int, list[WindowSample]] = {}
    for sample in dataset.samples:
        by_class.setdefault(sample.label, []).append(sample)

    synthetics: list[WindowSample] = []
    for cls in sorted(by_class):
        members = by_class[cls]
        deficit = target - len(members)
        if deficit == 0:
            continue
        if len(members) < 2:
            raise ValueError(
                f"class {cls} has a single sample; SMOTE needs at least 2"
            )
        points = np.stack([s.features for s in members]).astype(float)
        # pairwise distances among originals only; self excluded via argsort col 0
        diff = points[:, None, :] - points[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.argsort(dist, axis=1, kind="stable")
        m = min(n_neighbors, len(members) - 1)
        neighbor_idx = order[:, 1 : m + 1]
        for _ in range(deficit):
            src = int(rng.integers(len(members)))
            nn = int(neighbor_idx[src, int(rng.integers(m))])
            u = float(rng.random())
            feats = points[src] + u * (points[nn] - points[src])
            origin = members[src]
            synthetics.append(
                WindowSample(
                    features=feats,
                    label=cls,
                    year=origin.year,
                    anchor_doy=origin.anchor_doy,
                )
            )
    return Dataset.build(
        list(dataset.samples) + synthetics, k=dataset.k, feature_len=dataset.feature_len
    )
