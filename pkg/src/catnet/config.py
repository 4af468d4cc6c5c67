"""Run configuration: TOML in, validated dataclasses and a stable digest out.

Schema (every key optional unless noted)::

    seed = 0
    method = "catnet"            # catnet | finetune_only | joint
    mode = "one_stream:0"        # one_stream:<i> | rgb_d_concat | two_stream
    capacity_k = 20
    distill = true
    renormalize_means = false
    hidden = [128, 64]

    [data]                       # required: exactly one of path / synthetic
    path = "bench.catd"          # relative to the config file
    manifest = "bench.manifest.json"   # optional with path
    [data.synthetic]             # SyntheticSpec fields
    [data.split]                 # train/test(/validation) fractions
    train = 0.8
    test = 0.2
    seed = 0
    stratify = "profile"         # optional: split inside scene-profile strata

    [schedule]                   # required
    initial_classes = 4
    increment = 2
    num_increments = 3
    shuffle_seed = 7             # optional class-order shuffle

    [train.initial]              # TrainConfig fields, task 0
    [train.incremental]          # TrainConfig fields, later tasks
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dataset import Dataset, DatasetManifest, SyntheticSpec, generate_synthetic, load_dataset, split_by_group
from .trainer import RunOptions, TaskSchedule, TrainConfig, incremental_config, parse_mode, task0_config

METHODS = ("catnet", "finetune_only", "joint")


class ConfigError(ValueError):
    pass


def _only(section: Mapping, allowed, where: str) -> None:
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


@dataclass
class SplitSpec:
    fractions: dict[str, float] = field(default_factory=lambda: {"train": 0.8, "test": 0.2})
    seed: int = 0
    stratify: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitSpec":
        _only(d, {"train", "test", "validation", "seed", "stratify"}, "[data.split]")
        fr = {k: float(d[k]) for k in ("train", "validation", "test") if k in d}
        if d.get("stratify") not in (None, "profile"):
            raise ConfigError("[data.split] stratify must be \"profile\"")
        return cls(fr or cls().fractions, int(d.get("seed", 0)), d.get("stratify"))


@dataclass
class RunConfig:
    schedule: dict
    train_initial: TrainConfig
    train_incremental: TrainConfig
    data_path: str | None = None
    manifest_path: str | None = None
    synthetic: SyntheticSpec | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    method: str = "catnet"
    mode: str = "one_stream:0"
    capacity_k: int = 20
    distill: bool = True
    renormalize_means: bool = False
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    seed: int = 0

    def run_options(self) -> RunOptions:
        k, distill = self.capacity_k, self.distill
        if self.method == "finetune_only":
            k, distill = 0, False
        return RunOptions(self.mode, k, distill, tuple(self.hidden), self.renormalize_means, self.seed)

    def canonical(self) -> dict:
        d = asdict(self)
        d["train_initial"] = asdict(self.train_initial)
        d["train_incremental"] = asdict(self.train_incremental)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def load_data(self) -> tuple[Dataset, DatasetManifest]:
        if self.synthetic is not None:
            ds = generate_synthetic(self.synthetic)
            strata = None
            if self.split.stratify == "profile":
                prof = self.synthetic.profile()
                strata = {g: tuple(prof[g]) for g in range(self.synthetic.groups)}
            return ds, split_by_group(ds, self.split.fractions, self.split.seed, strata)
        ds = load_dataset(self.data_path)
        if self.manifest_path:
            man = DatasetManifest.load(self.manifest_path)
        else:
            man = split_by_group(ds, self.split.fractions, self.split.seed)
        return ds, man

    def task_schedule(self, num_classes: int) -> TaskSchedule:
        s = self.schedule
        return TaskSchedule.build(
            s["initial_classes"], s.get("increment", 0), s.get("num_increments", 0), num_classes, s.get("shuffle_seed")
        )


def _train_config(d: Mapping, factory, where: str) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    _only(d, names, where)
    try:
        return factory(**dict(d))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_config(doc: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    _only(
        doc,
        {"seed", "method", "mode", "capacity_k", "distill", "renormalize_means", "hidden", "data", "schedule", "train"},
        "config",
    )
    problems = []
    method = doc.get("method", "catnet")
    if method not in METHODS:
        problems.append(f"method: expected one of {', '.join(METHODS)}, got {method!r}")
    mode = doc.get("mode", "one_stream:0")
    try:
        parse_mode(mode)
    except ValueError as e:
        problems.append(f"mode: {e}")
    k = doc.get("capacity_k", 20)
    if not isinstance(k, int) or k < 0:
        problems.append(f"capacity_k: must be a non-negative integer, got {k!r}")
    hidden = doc.get("hidden", [128, 64])
    if not hidden or not all(isinstance(h, int) and h > 0 for h in hidden):
        problems.append(f"hidden: must be a non-empty list of positive integers, got {hidden!r}")

    data = doc.get("data")
    if not isinstance(data, Mapping):
        problems.append("data: section is required")
        data = {}
    _only(data, {"path", "manifest", "synthetic", "split"}, "[data]")
    if ("path" in data) == ("synthetic" in data):
        problems.append("data: give exactly one of path or synthetic")
    synthetic = None
    if "synthetic" in data:
        try:
            synthetic = SyntheticSpec.from_dict(data["synthetic"])
        except (TypeError, ValueError) as e:
            problems.append(f"data.synthetic: {e}")
    split = SplitSpec.from_dict(data.get("split", {}))
    if split.stratify and synthetic is None:
        problems.append("data.split.stratify needs a synthetic data section")

    sched = doc.get("schedule")
    if not isinstance(sched, Mapping) or "initial_classes" not in sched:
        problems.append("schedule: section with initial_classes is required")
        sched = {"initial_classes": 1}
    _only(sched, {"initial_classes", "increment", "num_increments", "shuffle_seed"}, "[schedule]")

    train = doc.get("train", {})
    _only(train, {"initial", "incremental"}, "[train]")
    t0 = _train_config(train.get("initial", {}), task0_config, "[train.initial]")
    ti = _train_config(train.get("incremental", {}), incremental_config, "[train.incremental]")
    if problems:
        raise ConfigError("; ".join(problems))

    def rel(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() or base_dir is None else base_dir / p)

    return RunConfig(
        schedule=dict(sched),
        train_initial=t0,
        train_incremental=ti,
        data_path=rel(data.get("path")),
        manifest_path=rel(data.get("manifest")),
        synthetic=synthetic,
        split=split,
        method=method,
        mode=mode,
        capacity_k=k,
        distill=bool(doc.get("distill", True)),
        renormalize_means=bool(doc.get("renormalize_means", False)),
        hidden=list(hidden),
        seed=int(doc.get("seed", 0)),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(doc, path.parent)


def load_toml(path) -> dict:
    try:
        return tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
