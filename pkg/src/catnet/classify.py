"""Nearest-mean-of-exemplars inference over one or two feature streams."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .exemplar import FeatureMeanMatrix
from .nnkernel import Network, ShapeError, extract_features, forward

log = logging.getLogger(__name__)

UNIT_TOL = 1e-6


@dataclass
class NormStats:
    """Running record of extracted feature norms."""

    count: int = 0
    zero_norm: int = 0
    max_deviation: float = 0.0

    def update(self, features: np.ndarray, zero: np.ndarray) -> None:
        self.count += len(features)
        self.zero_norm += int(zero.sum())
        ok = features[~zero]
        if len(ok):
            dev = float(np.max(np.abs(np.linalg.norm(ok, axis=1) - 1.0)))
            self.max_deviation = max(self.max_deviation, dev)

    def merge(self, other: "NormStats") -> None:
        self.count += other.count
        self.zero_norm += other.zero_norm
        self.max_deviation = max(self.max_deviation, other.max_deviation)


def fuse(*features) -> np.ndarray:
    """Concatenate unit-norm stream features in stream order.

    Works on single vectors or row-aligned batches. The result is not
    renormalized, so two unit streams give norm sqrt(2).
    """
    if not features:
        raise ValueError("nothing to fuse")
    arrs = [np.asarray(f, dtype=np.float64) for f in features]
    for s, a in enumerate(arrs):
        norms = np.linalg.norm(a, axis=-1)
        bad = np.abs(norms - 1.0) > UNIT_TOL
        if np.any(bad):
            worst = float(np.atleast_1d(norms)[np.argmax(np.atleast_1d(bad))])
            raise ValueError(f"stream {s} feature is not unit norm (measured {worst:.9g})")
    return np.concatenate(arrs, axis=-1)


@dataclass
class Stream:
    net: Network
    source: int | str  # modality index, or "concat" for input-level fusion


@dataclass
class FeatureExtractor:
    """Callable mapping a dataset to (fused) normalized features."""

    streams: list[Stream]
    stats: NormStats = field(default_factory=NormStats)

    @property
    def stream_dims(self) -> list[int]:
        return [s.net.feature_dim for s in self.streams]

    def __call__(self, ds: Dataset) -> np.ndarray:
        parts = []
        for s in self.streams:
            fb = extract_features(s.net, ds.inputs(s.source))
            self.stats.update(fb.features, fb.zero_norm)
            parts.append(fb.features)
        return parts[0] if len(parts) == 1 else np.hstack(parts)


def _check_dims(features: np.ndarray, means: FeatureMeanMatrix) -> None:
    if not len(means.classes):
        raise ValueError("feature mean matrix is empty")
    if features.shape[-1] != means.feature_dim:
        raise ShapeError(f"feature has {features.shape[-1]} dims, means have {means.feature_dim}")


def squared_distances(features: np.ndarray, means: np.ndarray) -> np.ndarray:
    diff = features[:, None, :] - means[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def nme_classify(feature, means: FeatureMeanMatrix) -> int:
    """Class whose mean is nearest in L2; ties go to the earliest class."""
    f = np.asarray(feature, dtype=np.float64)
    _check_dims(f, means)
    d2 = squared_distances(f[None, :], means.means)[0]
    return means.classes[int(np.argmin(d2))]


@dataclass
class BatchPrediction:
    ids: np.ndarray
    truth: np.ndarray
    pred: np.ndarray  # -1 where the sample was excluded
    distances: np.ndarray  # (n, n_classes) L2 distances; empty for softmax predictions
    valid: np.ndarray
    errors: list[str] = field(default_factory=list)

    @property
    def n_excluded(self) -> int:
        return int((~self.valid).sum())

    def accuracy(self) -> float:
        from .evaluate import accuracy

        return accuracy(self.pred[self.valid], self.truth[self.valid])


def _missing_modalities(ds: Dataset, streams: Sequence[Stream]) -> np.ndarray:
    need = set()
    for s in streams:
        need |= set(range(len(ds.modalities))) if s.source == "concat" else {int(s.source)}
    bad = np.zeros(len(ds), dtype=bool)
    for v in sorted(need):
        bad |= ~np.all(np.isfinite(ds.modalities[v]), axis=1)
    return bad


def classify_batch(ds: Dataset, extractor: FeatureExtractor, means: FeatureMeanMatrix) -> BatchPrediction:
    """NME predictions for every sample of ``ds``.

    A sample with a missing (non-finite) modality vector is excluded: its
    prediction is -1 and an error line is recorded.
    """
    n = len(ds)
    missing = _missing_modalities(ds, extractor.streams)
    errors = [f"sample {int(ds.ids[i])}: missing modality input" for i in np.flatnonzero(missing)]
    if errors:
        log.warning("%d sample(s) excluded for missing modality input", len(errors))
    pred = np.full(n, -1, dtype=np.int64)
    dist = np.full((n, len(means.classes)), np.nan)
    ok = np.flatnonzero(~missing)
    if len(ok):
        feats = extractor(ds.subset(ok))
        _check_dims(feats, means)
        d = np.sqrt(squared_distances(feats, means.means))
        dist[ok] = d
        pred[ok] = np.asarray(means.classes, dtype=np.int64)[np.argmin(d, axis=1)]
    return BatchPrediction(ds.ids.copy(), ds.labels.copy(), pred, dist, ~missing, errors)


def classify_softmax(ds: Dataset, streams: Sequence[Stream], output_classes: Sequence[int]) -> BatchPrediction:
    """Argmax of the softmax head (averaged over streams).

    Used only when no exemplars exist to form class means.
    """
    n = len(ds)
    missing = _missing_modalities(ds, streams)
    errors = [f"sample {int(ds.ids[i])}: missing modality input" for i in np.flatnonzero(missing)]
    pred = np.full(n, -1, dtype=np.int64)
    ok = np.flatnonzero(~missing)
    if len(ok):
        sub = ds.subset(ok)
        prob = sum(forward(s.net, sub.inputs(s.source)).softmax for s in streams) / len(streams)
        pred[ok] = np.asarray(output_classes, dtype=np.int64)[np.argmax(prob, axis=1)]
    return BatchPrediction(ds.ids.copy(), ds.labels.copy(), pred, np.empty((n, 0)), ~missing, errors)


def write_predictions(path, bp: BatchPrediction) -> None:
    """CSV dump: sample_id,true_class,pred_class,distance_to_pred,distance_margin."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "true_class", "pred_class", "distance_to_pred", "distance_margin"])
        for i in range(len(bp.ids)):
            d_pred = margin = ""
            if bp.valid[i] and bp.distances.shape[1]:
                row = np.sort(bp.distances[i])
                d_pred = repr(float(row[0]))
                margin = repr(float(row[1] - row[0])) if len(row) > 1 else ""
            w.writerow([int(bp.ids[i]), int(bp.truth[i]), int(bp.pred[i]), d_pred, margin])
