"""Herding exemplar selection and per-class feature means."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

Extractor = Callable[[Dataset], np.ndarray]


def class_mean(features) -> np.ndarray:
    """Plain arithmetic mean of the rows; no renormalization."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("no samples for class")
    return f.sum(axis=0) / f.shape[0]


def herd_indices(features, k: int) -> list[int]:
    """Greedy herding order: indices whose running mean tracks the class mean.

    Step t picks, among rows not yet chosen, the row x minimizing
    ``|| mu - (x + sum of chosen) / t ||``. Exact ties go to the lowest index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    f = np.asarray(features, dtype=np.float64)
    mu = class_mean(f)
    n = f.shape[0]
    taken = np.zeros(n, dtype=bool)
    running = np.zeros_like(mu)
    chosen: list[int] = []
    for t in range(1, min(k, n) + 1):
        dist = np.linalg.norm(mu - (running + f) / t, axis=1)
        dist[taken] = np.inf
        i = int(np.argmin(dist))  # first minimum -> lowest index
        chosen.append(i)
        taken[i] = True
        running = running + f[i]
    return chosen


def herd_select(samples: Sequence, features, k: int) -> list:
    if len(samples) != len(features):
        raise ValueError(f"{len(samples)} samples but {len(features)} feature rows")
    if len(samples) == 0:
        raise ValueError("no samples for class")
    return [samples[i] for i in herd_indices(features, k)]


@dataclass
class ExemplarStore:
    capacity_k: int
    per_class: dict[int, Dataset] = field(default_factory=dict)
    class_order: list[int] = field(default_factory=list)
    under_capacity: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return sum(len(d) for d in self.per_class.values())

    def is_empty(self) -> bool:
        return len(self) == 0

    def cached(self) -> Dataset | None:
        """All cached samples, concatenated in class order."""
        parts = [self.per_class[c] for c in self.class_order if len(self.per_class[c])]
        if not parts:
            return None
        return Dataset(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.groups for p in parts]),
            [np.vstack([p.modalities[v] for p in parts]) for v in range(len(parts[0].modalities))],
            parts[0].num_classes,
        )

    def ids(self) -> dict[int, list[int]]:
        return {c: [int(i) for i in self.per_class[c].ids] for c in self.class_order}

    def save(self, path) -> None:
        doc = {
            "capacity_k": self.capacity_k,
            "class_order": self.class_order,
            "exemplars": {str(c): ids for c, ids in self.ids().items()},
            "under_capacity": sorted(self.under_capacity),
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path, dataset: Dataset) -> "ExemplarStore":
        """Rebuild a store from saved sample ids, without re-herding."""
        doc = json.loads(Path(path).read_text())
        order = [int(c) for c in doc["class_order"]]
        per_class = {c: dataset.by_ids(doc["exemplars"][str(c)]) for c in order}
        return cls(int(doc["capacity_k"]), per_class, order, {int(c) for c in doc["under_capacity"]})


def update_store(store: ExemplarStore, new_class_samples: Mapping[int, Dataset], extractor: Extractor) -> ExemplarStore:
    """Herd ``capacity_k`` exemplars for each new class; old classes are shared untouched."""
    per_class = dict(store.per_class)
    order = list(store.class_order)
    under = set(store.under_capacity)
    for c, ds in new_class_samples.items():
        if c in per_class:
            raise ValueError(f"class {c} is already in the exemplar store")
        if len(ds) == 0:
            raise ValueError(f"no samples for class {c}")
        if store.capacity_k == 0:
            idx: list[int] = []
        else:
            idx = herd_indices(extractor(ds), store.capacity_k)
        if len(ds) < store.capacity_k:
            under.add(c)
            log.warning("class %s has %d samples, below capacity %d", c, len(ds), store.capacity_k)
        per_class[c] = ds.subset(np.asarray(idx, dtype=np.int64))
        order.append(c)
    return ExemplarStore(store.capacity_k, per_class, order, under)


@dataclass
class FeatureMeanMatrix:
    classes: list[int]
    means: np.ndarray  # (n_classes, feature_dim)
    stream_dims: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.means.shape[0] != len(self.classes):
            raise ValueError("one mean row per class required")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("feature means must be finite")
        if not self.stream_dims:
            self.stream_dims = [self.means.shape[1]]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def stream(self, s: int) -> np.ndarray:
        start = sum(self.stream_dims[:s])
        return self.means[:, start : start + self.stream_dims[s]]


def compute_mean_matrix(
    store: ExemplarStore, extractor: Extractor, renormalize_means: bool = False, stream_dims: Sequence[int] = ()
) -> FeatureMeanMatrix:
    """Mean exemplar feature per class under the current extractor."""
    if not store.class_order:
        raise ValueError("exemplar store is empty")
    rows = []
    for c in store.class_order:
        ds = store.per_class[c]
        if len(ds) == 0:
            raise ValueError(f"no samples for class {c}")
        mu = class_mean(extractor(ds))
        if renormalize_means:
            # per stream, so fused means keep one unit of norm per modality
            bounds = np.cumsum([0, *(stream_dims or [len(mu)])])
            for a, b in zip(bounds, bounds[1:]):
                norm = np.linalg.norm(mu[a:b])
                if norm > 0:
                    mu[a:b] /= norm
        rows.append(mu)
    return FeatureMeanMatrix(list(store.class_order), np.vstack(rows), list(stream_dims))
