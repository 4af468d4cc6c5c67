"""Accuracy matrix bookkeeping and lifelong-learning metrics.

``R[i, j]`` is the accuracy of the model after task ``i`` on the test data
of task ``j``. Only ``j <= i`` is defined; the rest is stored as NaN and
serialized as null.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exemplar import FeatureMeanMatrix


def accuracy(preds, truths) -> float:
    p = np.asarray(preds)
    t = np.asarray(truths)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(p == t)) / p.size


class AccuracyMatrix:
    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError("need at least one task")
        self.values = np.full((n_tasks, n_tasks), np.nan)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def __setitem__(self, ij, value: float) -> None:
        i, j = ij
        if j > i:
            raise IndexError(f"R[{i}, {j}] is above the diagonal and stays undefined")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.values[i, j] = value

    def __getitem__(self, ij) -> float:
        return float(self.values[ij])

    def row(self, i: int) -> np.ndarray:
        return self.values[i, : i + 1].copy()

    def is_complete(self) -> bool:
        return all(np.all(np.isfinite(self.row(i))) for i in range(self.n_tasks))

    def to_list(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.values]

    @classmethod
    def from_list(cls, rows) -> "AccuracyMatrix":
        r = cls(len(rows))
        for i, row in enumerate(rows):
            if len(row) != len(rows):
                raise ValueError("accuracy matrix must be square")
            for j, v in enumerate(row):
                if v is not None:
                    r[i, j] = v
        return r

    def __eq__(self, other) -> bool:
        return isinstance(other, AccuracyMatrix) and np.array_equal(self.values, other.values, equal_nan=True)

    def __repr__(self) -> str:
        return f"AccuracyMatrix({self.to_list()})"


def exact_mean(values) -> float:
    """Mean of the stored doubles computed in rationals, rounded once."""
    vals = [Fraction(float(v)) for v in values]
    if not vals:
        raise ValueError("mean of no values")
    return float(sum(vals) / len(vals))


def compute_bwt(r: AccuracyMatrix) -> float:
    """Mean of the strict lower triangle (accuracy of later models on earlier tasks)."""
    if r.n_tasks < 2:
        raise ValueError("BWT undefined for single task")
    lower = r.values[np.tril_indices(r.n_tasks, k=-1)]
    if np.any(np.isnan(lower)):
        raise ValueError("accuracy matrix has undefined lower-triangle entries")
    return exact_mean(lower)


def compute_bwt_delta(r: AccuracyMatrix) -> float:
    """Forgetting-style BWT, mean of R[i, j] - R[j, j] over i > j.

    Not the headline metric; reported for comparison with other work.
    """
    if r.n_tasks < 2:
        raise ValueError("BWT undefined for single task")
    i, j = np.tril_indices(r.n_tasks, k=-1)
    return float(np.mean(r.values[i, j] - r.values[j, j]))


def compute_mean_accuracy(r: AccuracyMatrix) -> float:
    last = r.row(r.n_tasks - 1)
    if np.any(np.isnan(last)):
        raise ValueError("last row of the accuracy matrix is incomplete")
    return exact_mean(last)


def initial_accuracy(r: AccuracyMatrix) -> float:
    return r[0, 0]


def summarize_means(s: FeatureMeanMatrix) -> list[np.ndarray]:
    """Per-class average over the feature axis, one vector per stream."""
    return [s.stream(k).mean(axis=1) for k in range(len(s.stream_dims))]


@dataclass
class MetricsReport:
    mean_accuracy: float
    initial_accuracy: float
    per_task_final: list[float]
    bwt: float | None = None
    bwt_delta: float | None = None
    micro_accuracy: float | None = None
    extra: dict = field(default_factory=dict)


def metrics_from_matrix(r: AccuracyMatrix, micro_accuracy: float | None = None) -> MetricsReport:
    multi = r.n_tasks >= 2
    return MetricsReport(
        mean_accuracy=compute_mean_accuracy(r),
        initial_accuracy=initial_accuracy(r),
        per_task_final=[float(v) for v in r.row(r.n_tasks - 1)],
        bwt=compute_bwt(r) if multi else None,
        bwt_delta=compute_bwt_delta(r) if multi else None,
        micro_accuracy=micro_accuracy,
    )


# -- emission ----------------------------------------------------------------


def metrics_document(run_id: str, config_digest: str, r: AccuracyMatrix, m: MetricsReport) -> dict:
    doc = {"run_id": run_id, "config_digest": config_digest, "R": r.to_list()}
    body = asdict(m)
    extra = body.pop("extra")
    doc.update(body)
    doc.update(extra)
    return doc


def write_matrix_csv(path, r: AccuracyMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model"] + [f"Te_{j}" for j in range(r.n_tasks)])
        for i, row in enumerate(r.to_list()):
            w.writerow([f"M_{i}"] + ["" if v is None else repr(v) for v in row])


def heatmap_pixels(r: AccuracyMatrix, cell: int = 16) -> np.ndarray:
    """8-bit grayscale image of R; lighter is higher accuracy, undefined is black."""
    gray = np.where(np.isnan(r.values), 0.0, r.values)
    img = np.round(gray * 255).astype(np.uint8)
    return np.kron(img, np.ones((cell, cell), dtype=np.uint8))


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary PGM (P5), the simplest uncompressed raster."""
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def load_metrics(path) -> dict:
    return json.loads(Path(path).read_text())
