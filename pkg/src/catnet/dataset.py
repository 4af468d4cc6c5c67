"""Synthetic multi-modal class streams, the CATD file format and group splits.

Randomness comes from ``numpy.random.Generator`` over PCG64, seeded with the
dataset seed. Draw order is fixed: class centers (class-major, then
modality), then per sample (class, sample index, modality). PCG64 and the
ziggurat normal sampler are bit-stable across platforms.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DATASET_MAGIC = b"CATD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIB")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: int
    label: int
    group: int
    modality_vectors: tuple[np.ndarray, ...]


@dataclass
class Dataset:
    """Columnar sample storage. ``modalities[v]`` is ``(n, dims[v])``."""

    ids: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    modalities: list[np.ndarray]
    num_classes: int

    def __post_init__(self):
        n = len(self.ids)
        if len(self.labels) != n or len(self.groups) != n:
            raise ValueError("ids, labels and groups must have equal length")
        for v, arr in enumerate(self.modalities):
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValueError(f"modality {v} has shape {arr.shape}, expected ({n}, d)")
        if len(np.unique(self.ids)) != n:
            raise ValueError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def modality_dims(self) -> list[int]:
        return [a.shape[1] for a in self.modalities]

    def sample(self, i: int) -> Sample:
        return Sample(int(self.ids[i]), int(self.labels[i]), int(self.groups[i]), tuple(m[i] for m in self.modalities))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(self.ids[index], self.labels[index], self.groups[index], [m[index] for m in self.modalities], self.num_classes)

    def of_classes(self, classes: Sequence[int]) -> "Dataset":
        return self.subset(np.isin(self.labels, np.asarray(classes, dtype=np.int64)))

    def by_ids(self, ids: Sequence[int]) -> "Dataset":
        pos = {int(s): i for i, s in enumerate(self.ids)}
        try:
            return self.subset(np.array([pos[int(s)] for s in ids], dtype=np.int64))
        except KeyError as e:
            raise KeyError(f"sample id {e.args[0]} not in dataset") from None

    def inputs(self, modality: int | str) -> np.ndarray:
        """Network input matrix: one modality, or ``"concat"`` of all of them."""
        if modality == "concat":
            return np.hstack(self.modalities)
        return self.modalities[int(modality)]


# -- generation --------------------------------------------------------------


@dataclass
class SyntheticSpec:
    classes: int
    dims: list[int]
    samples_per_class: int
    groups: int
    separation: float = 1.0
    noise: float = 1.0
    # scene_profiles[g][v]: noise multiplier for group g, modality v
    scene_profiles: list[list[float]] | None = None
    seed: int = 0

    def validate(self) -> None:
        problems = []
        for name in ("classes", "samples_per_class", "groups"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if not self.dims:
            problems.append("dims must list at least one modality")
        elif any(d < 1 for d in self.dims):
            problems.append(f"dims must all be >= 1, got {self.dims}")
        if not self.separation > 0:
            problems.append("separation must be > 0")
        if self.noise < 0:
            problems.append("noise must be >= 0")
        if self.scene_profiles is not None:
            prof = np.asarray(self.scene_profiles, dtype=float)
            if prof.shape != (self.groups, len(self.dims)):
                problems.append(f"scene_profiles must be {self.groups} x {len(self.dims)}, got {prof.shape}")
            elif not np.all(np.isfinite(prof)) or np.any(prof < 0):
                problems.append("scene_profiles must be finite and non-negative")
        if problems:
            raise ValueError("; ".join(problems))

    def profile(self) -> np.ndarray:
        if self.scene_profiles is None:
            return np.ones((self.groups, len(self.dims)))
        return np.asarray(self.scene_profiles, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec field(s): {', '.join(sorted(unknown))}")
        missing = {"classes", "dims", "samples_per_class", "groups"} - set(d)
        if missing:
            raise ValueError(f"missing synthetic spec field(s): {', '.join(sorted(missing))}")
        spec = cls(**d)
        spec.validate()
        return spec


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian clusters around per-(class, modality) centers on a sphere.

    Sample ``j`` of each class belongs to group ``j % groups``; its noise in
    modality ``v`` is ``noise * scene_profiles[group][v]`` times a standard
    normal draw.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    prof = spec.profile()
    centers = []
    for _ in range(spec.classes):
        row = []
        for d in spec.dims:
            c = rng.standard_normal(d)
            row.append(spec.separation * c / np.linalg.norm(c))
        centers.append(row)

    n = spec.classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.classes, dtype=np.int64), spec.samples_per_class)
    groups = np.tile(np.arange(spec.samples_per_class, dtype=np.int64) % spec.groups, spec.classes)
    mods = [np.empty((n, d)) for d in spec.dims]
    i = 0
    for c in range(spec.classes):
        for j in range(spec.samples_per_class):
            g = j % spec.groups
            for v, d in enumerate(spec.dims):
                eps = rng.standard_normal(d)
                mods[v][i] = centers[c][v] + (spec.noise * prof[g, v]) * eps
            i += 1
    return Dataset(np.arange(n, dtype=np.int64), labels, groups, mods, spec.classes)


# -- splits ------------------------------------------------------------------


@dataclass
class DatasetManifest:
    num_classes: int
    modality_dims: list[int]
    groups: list[int]
    split: dict[int, str]
    seed: int
    fractions: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        missing = [g for g in self.groups if g not in self.split]
        if missing:
            raise ValueError(f"groups without a split: {missing}")
        names = set(self.split.values())
        for need in ("train", "test"):
            if need not in names:
                raise ValueError(f"split {need!r} is empty")

    def groups_in(self, name: str) -> list[int]:
        return sorted(g for g, s in self.split.items() if s == name)

    def select(self, dataset: Dataset, name: str) -> Dataset:
        return dataset.subset(np.isin(dataset.groups, self.groups_in(name)))

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "modality_dims": list(self.modality_dims),
            "groups": list(self.groups),
            "split": {str(g): s for g, s in sorted(self.split.items())},
            "seed": self.seed,
            "fractions": dict(self.fractions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        return cls(
            int(d["num_classes"]),
            [int(x) for x in d["modality_dims"]],
            [int(g) for g in d["groups"]],
            {int(g): s for g, s in d["split"].items()},
            int(d["seed"]),
            dict(d.get("fractions", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


SPLIT_ORDER = ("train", "validation", "test")


def _apportion(n: int, fractions: Mapping[str, float]) -> dict[str, int]:
    # largest remainder; ties go to the later split in SPLIT_ORDER
    names = [s for s in SPLIT_ORDER if fractions.get(s, 0) > 0]
    raw = {s: n * fractions[s] for s in names}
    counts = {s: int(np.floor(raw[s] + 1e-9)) for s in names}
    left = n - sum(counts.values())
    order = sorted(names, key=lambda s: (-(raw[s] - counts[s]), -SPLIT_ORDER.index(s)))
    for s in order[:left]:
        counts[s] += 1
    return counts


def split_by_group(
    dataset: Dataset,
    fractions: Mapping[str, float],
    seed: int,
    strata: Mapping[int, object] | None = None,
) -> DatasetManifest:
    """Assign whole groups to train/test (and optionally validation).

    Groups are shuffled with ``seed`` and cut by fraction. With ``strata``
    (group -> key) the cut is made inside each stratum so every split sees
    every stratum when sizes allow.
    """
    unknown = set(fractions) - set(SPLIT_ORDER)
    if unknown:
        raise ValueError(f"unknown split name(s): {sorted(unknown)}")
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions.values())}")
    groups = sorted(int(g) for g in np.unique(dataset.groups))
    rng = np.random.default_rng(seed)
    if strata is None:
        buckets = [groups]
    else:
        keys = sorted({strata[g] for g in groups}, key=str)
        buckets = [[g for g in groups if strata[g] == k] for k in keys]
    split: dict[int, str] = {}
    for bucket in buckets:
        order = [bucket[i] for i in rng.permutation(len(bucket))]
        counts = _apportion(len(bucket), fractions)
        pos = 0
        for name in SPLIT_ORDER:
            for g in order[pos : pos + counts.get(name, 0)]:
                split[g] = name
            pos += counts.get(name, 0)
    for name in SPLIT_ORDER:
        if fractions.get(name, 0) > 0 and name not in split.values():
            raise ValueError(f"split {name!r} would be empty with {len(groups)} group(s)")
    return DatasetManifest(dataset.num_classes, dataset.modality_dims, groups, split, seed, dict(fractions))


# -- task views --------------------------------------------------------------


@dataclass
class TaskView:
    train: Dataset
    tests: list[Dataset]  # Te_0 .. Te_i


def task_view(dataset: Dataset, manifest: DatasetManifest, schedule, task_index: int) -> TaskView:
    """Training samples of one task's classes plus per-task test sets up to it."""
    if not 0 <= task_index < schedule.num_tasks:
        raise IndexError(f"task {task_index} out of range for {schedule.num_tasks} task(s)")
    train = manifest.select(dataset, "train")
    if "validation" in manifest.split.values():
        train = dataset.subset(np.isin(dataset.groups, manifest.groups_in("train") + manifest.groups_in("validation")))
    test = manifest.select(dataset, "test")
    return TaskView(
        train.of_classes(schedule.task_classes(task_index)),
        [test.of_classes(schedule.task_classes(j)) for j in range(task_index + 1)],
    )


# -- CATD file format -----------------------------------------------------------


def _record_dtype(dims: Sequence[int]) -> np.dtype:
    fields = [("id", "<u8"), ("label", "<u4"), ("group", "<u4")]
    fields += [(f"m{v}", "<f8", (d,)) for v, d in enumerate(dims)]
    return np.dtype(fields)


def dumps_dataset(ds: Dataset) -> bytes:
    dims = ds.modality_dims
    head = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.num_classes, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<Q", len(ds))
    rec = np.zeros(len(ds), dtype=_record_dtype(dims))
    rec["id"] = ds.ids
    rec["label"] = ds.labels
    rec["group"] = ds.groups
    for v, m in enumerate(ds.modalities):
        rec[f"m{v}"] = m
    return head + rec.tobytes()


def loads_dataset(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise DatasetFormatError(f"truncated header: expected {_HEADER.size} bytes, found {len(buf)}")
    magic, version, num_classes, n_mod = _HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}, expected {DATASET_VERSION}")
    off = _HEADER.size
    head_end = off + 4 * n_mod + 8
    if len(buf) < head_end:
        raise DatasetFormatError(f"truncated header: expected {head_end} bytes, found {len(buf)}")
    dims = list(struct.unpack_from(f"<{n_mod}I", buf, off))
    if n_mod == 0 or any(d == 0 for d in dims):
        raise DatasetFormatError(f"inconsistent modality dims {dims}")
    (count,) = struct.unpack_from("<Q", buf, off + 4 * n_mod)
    dt = _record_dtype(dims)
    expected = head_end + count * dt.itemsize
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "oversized"
        raise DatasetFormatError(f"{kind} file: expected {expected} bytes, found {len(buf)}")
    rec = np.frombuffer(buf, dtype=dt, count=count, offset=head_end)
    labels = rec["label"].astype(np.int64)
    if count and labels.max() >= num_classes:
        raise DatasetFormatError(f"label {labels.max()} out of range for {num_classes} classes")
    mods = [np.array(rec[f"m{v}"], dtype=np.float64).reshape(count, d) for v, d in enumerate(dims)]
    return Dataset(rec["id"].astype(np.int64), labels, rec["group"].astype(np.int64), mods, int(num_classes))


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_bytes())
