"""Incremental training: cross-entropy on new classes plus distillation on cached exemplars."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classify import FeatureExtractor, NormStats, Stream, classify_batch, classify_softmax
from .dataset import Dataset, DatasetManifest, task_view
from .evaluate import AccuracyMatrix, accuracy
from .exemplar import ExemplarStore, FeatureMeanMatrix, compute_mean_matrix, update_store
from .nnkernel import SGD, Network, backward, expand_output, forward, init_network, softmax

log = logging.getLogger(__name__)

MODES = ("one_stream", "rgb_d_concat", "two_stream")


class TrainingError(RuntimeError):
    pass


@dataclass
class TaskSchedule:
    initial_classes: int
    increment: int
    num_increments: int
    class_permutation: list[int]

    def __post_init__(self):
        if self.initial_classes < 1:
            raise ValueError("initial block needs at least one class")
        if self.num_increments < 0 or (self.num_increments and self.increment < 1):
            raise ValueError("increments need at least one class each")
        if len(set(self.class_permutation)) != len(self.class_permutation):
            raise ValueError("class permutation has duplicates")
        if self.total_classes > len(self.class_permutation):
            raise ValueError(
                f"schedule needs {self.total_classes} classes, permutation has {len(self.class_permutation)}"
            )

    @classmethod
    def build(cls, initial_classes: int, increment: int, num_increments: int, num_classes: int, shuffle_seed=None):
        perm = list(range(num_classes))
        if shuffle_seed is not None:
            perm = [int(c) for c in np.random.default_rng(shuffle_seed).permutation(num_classes)]
        return cls(initial_classes, increment, num_increments, perm)

    @property
    def num_tasks(self) -> int:
        return 1 + self.num_increments

    @property
    def total_classes(self) -> int:
        return self.initial_classes + self.increment * self.num_increments

    def task_classes(self, i: int) -> list[int]:
        if not 0 <= i < self.num_tasks:
            raise IndexError(f"task {i} out of range for {self.num_tasks} task(s)")
        if i == 0:
            return self.class_permutation[: self.initial_classes]
        start = self.initial_classes + (i - 1) * self.increment
        return self.class_permutation[start : start + self.increment]

    def seen_classes(self, i: int) -> list[int]:
        return self.class_permutation[: self.initial_classes + i * self.increment]

    def output_index(self) -> dict[int, int]:
        """Class id -> network output unit (outputs grow in schedule order)."""
        return {c: k for k, c in enumerate(self.class_permutation[: self.total_classes])}


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 12
    lr_initial: float = 0.001
    lr_drop_epoch: int = 6
    lr_drop_factor: float = 10.0  # lr is divided by this from lr_drop_epoch on
    momentum: float = 0.9
    weight_decay: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 1 <= self.lr_drop_epoch <= self.epochs:
            raise ValueError("lr_drop_epoch must lie in [1, epochs]")
        if self.lr_initial <= 0 or self.lr_drop_factor <= 0:
            raise ValueError("learning rate and drop factor must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch."""
        return self.lr_initial if epoch < self.lr_drop_epoch else self.lr_initial / self.lr_drop_factor

    def lr_trace(self) -> list[float]:
        return [self.lr_at(e) for e in range(1, self.epochs + 1)]


def task0_config(**kw) -> TrainConfig:
    base = dict(epochs=50, lr_drop_epoch=25)
    base.update(kw)
    return TrainConfig(**base)


def incremental_config(**kw) -> TrainConfig:
    base = dict(epochs=12, lr_drop_epoch=6)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class DistillationTargets:
    q: np.ndarray  # (n_cached, n_old)
    n_old: int
    captured_at_update: int

    def __len__(self) -> int:
        return len(self.q)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


@dataclass
class LossResult:
    loss: float
    loss_ce: float
    loss_distill: float
    grads: list[np.ndarray]


def task_loss(
    net: Network,
    new_x: np.ndarray,
    new_y: np.ndarray,
    cached_x: np.ndarray | None = None,
    q: np.ndarray | None = None,
) -> LossResult:
    """Summed loss over the batch and its parameter gradients.

    ``new_y`` holds output indices. The distillation term compares ``q``
    with the model softmax restricted to the first ``q.shape[1]`` outputs and
    renormalized there, which equals the softmax over the old logits alone.
    """
    new_x = np.atleast_2d(np.asarray(new_x, dtype=np.float64))
    new_y = np.asarray(new_y, dtype=np.int64)
    if len(new_x) == 0:
        raise ValueError("new-class batch is empty")
    if len(new_y) != len(new_x):
        raise ValueError(f"{len(new_x)} new samples but {len(new_y)} labels")
    k = net.output_classes
    if new_y.min() < 0 or new_y.max() >= k:
        raise ValueError(f"label outside the {k} network outputs")

    z_new = forward(net, new_x).logits
    ls = _log_softmax(z_new)
    rows = np.arange(len(new_y))
    loss_ce = float(-ls[rows, new_y].sum())
    g_new = np.exp(ls)
    g_new[rows, new_y] -= 1.0

    loss_d = 0.0
    xs, gs = [new_x], [g_new]
    if cached_x is not None and len(cached_x):
        if q is None or len(q) != len(cached_x):
            raise ValueError("cached batch needs one distillation target per sample")
        n = q.shape[1]
        if n > k:
            raise ValueError(f"targets cover {n} classes, network has {k} outputs")
        z_old = forward(net, cached_x).logits[:, :n]
        ls_old = _log_softmax(z_old)
        loss_d = float(-(q * ls_old).sum())
        g_c = np.zeros((len(cached_x), k))
        g_c[:, :n] = np.exp(ls_old) * q.sum(axis=1, keepdims=True) - q
        xs.append(np.asarray(cached_x, dtype=np.float64))
        gs.append(g_c)
    grads = backward(net, np.vstack(xs), np.vstack(gs))
    return LossResult(loss_ce + loss_d, loss_ce, loss_d, grads)


def snapshot_targets(snapshot: Network, cached_x: np.ndarray, n_old: int) -> DistillationTargets:
    """Old-class softmax of a frozen model on every cached sample."""
    z = forward(snapshot, np.atleast_2d(cached_x)).logits[:, :n_old]
    return DistillationTargets(softmax(z), n_old, snapshot.updates)


@dataclass
class TaskTrace:
    lr_by_epoch: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    steps: int = 0


def train_task(
    net: Network,
    new_x: np.ndarray,
    new_y: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    cached_x: np.ndarray | None = None,
    targets: DistillationTargets | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TaskTrace:
    """Train ``net`` in place for ``config.epochs`` epochs.

    Each step takes ``batch_size // 2`` shuffled new-class samples and the
    rest from the cached exemplars (cycled, reshuffled on wrap-around). With
    no cache the whole batch is new-class samples.
    """
    if len(new_x) == 0:
        raise ValueError("task has no training samples")
    use_cache = cached_x is not None and targets is not None and len(cached_x) > 0
    if use_cache and targets.captured_at_update != net.updates:
        raise TrainingError("distillation targets must be captured before the task's first update")
    opt = SGD(net, config.lr_initial, config.momentum, config.weight_decay)
    n_new = config.batch_size // 2 if use_cache else config.batch_size
    n_cached = config.batch_size - n_new
    trace = TaskTrace()
    cache_order = np.empty(0, dtype=np.int64)
    cache_pos = 0
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        trace.lr_by_epoch.append(opt.lr)
        perm = rng.permutation(len(new_x))
        n_steps = math.ceil(len(new_x) / n_new)
        for step in range(n_steps):
            idx = perm[step * n_new : (step + 1) * n_new]
            cx = q = None
            if use_cache:
                take = []
                while len(take) < n_cached:
                    if cache_pos >= len(cache_order):
                        cache_order = rng.permutation(len(cached_x))
                        cache_pos = 0
                    grab = cache_order[cache_pos : cache_pos + n_cached - len(take)]
                    cache_pos += len(grab)
                    take.extend(grab.tolist())
                cx, q = cached_x[take], targets.q[take]
            res = task_loss(net, new_x[idx], new_y[idx], cx, q)
            if not math.isfinite(res.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step}")
            opt.step(net, res.grads)
            trace.steps += 1
            trace.losses.append(res.loss)
            if on_step is not None:
                on_step({"epoch": epoch, "step": step, "lr": opt.lr, "loss_ce": res.loss_ce, "loss_distill": res.loss_distill})
    return trace


# -- whole schedules ---------------------------------------------------------


def parse_mode(mode: str) -> list[int | str]:
    """Stream input sources for a representation mode."""
    if mode == "two_stream":
        return [0, 1]
    if mode == "rgb_d_concat":
        return ["concat"]
    if mode.startswith("one_stream:"):
        return [int(mode.split(":", 1)[1])]
    raise ValueError(f"unknown mode {mode!r}; expected one_stream:<index>, rgb_d_concat or two_stream")


@dataclass
class RunOptions:
    mode: str = "one_stream:0"
    capacity_k: int = 20
    distill: bool = True
    hidden: tuple[int, ...] = (128, 64)
    renormalize_means: bool = False
    seed: int = 0


@dataclass
class RunResult:
    R: AccuracyMatrix
    streams: list[Stream]
    store: ExemplarStore
    means: FeatureMeanMatrix | None
    norm_stats: NormStats
    lr_traces: list[list[list[float]]]  # [task][stream] -> per-epoch lr
    test_predictions: object = None
    micro_accuracy: float | None = None
    per_task_nme: list[float] | None = None
    per_task_softmax: list[float] | None = None
    snapshot_checks: list[tuple[int, int]] = field(default_factory=list)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def _check_modes(dataset: Dataset, sources: Sequence) -> None:
    for s in sources:
        if s != "concat" and not 0 <= int(s) < len(dataset.modalities):
            raise ValueError(f"mode needs modality {s}, dataset has {len(dataset.modalities)}")


def run_schedule(
    dataset: Dataset,
    manifest: DatasetManifest,
    schedule: TaskSchedule,
    configs: tuple[TrainConfig, TrainConfig],
    opts: RunOptions,
    on_step: Callable[[dict], None] | None = None,
    on_task_end: Callable[[int, RunResult], None] | None = None,
) -> RunResult:
    """Run every task of ``schedule`` and fill the accuracy matrix.

    Per task: grow outputs, capture distillation targets, train each stream,
    herd exemplars for the new classes, recompute class means and evaluate
    on the test sets of all tasks so far. Two-stream runs train one network
    per modality; herding, means and classification use the fused feature.
    Without exemplars (``capacity_k == 0``) classification falls back to the
    softmax head.
    """
    sources = parse_mode(opts.mode)
    _check_modes(dataset, sources)
    if schedule.total_classes > dataset.num_classes:
        raise ValueError(f"schedule needs {schedule.total_classes} classes, dataset has {dataset.num_classes}")
    out_idx = schedule.output_index()
    streams: list[Stream] = []
    for s_i, src in enumerate(sources):
        in_dim = sum(dataset.modality_dims) if src == "concat" else dataset.modality_dims[int(src)]
        sizes = [in_dim, *opts.hidden, schedule.initial_classes]
        streams.append(Stream(init_network(sizes, _rng(opts.seed, 0, s_i, 0)), src))
    extractor = FeatureExtractor(streams)
    store = ExemplarStore(opts.capacity_k)
    R = AccuracyMatrix(schedule.num_tasks)
    result = RunResult(R, streams, store, None, extractor.stats, [])

    for t in range(schedule.num_tasks):
        view = task_view(dataset, manifest, schedule, t)
        cfg = configs[0] if t == 0 else configs[1]
        n_old = len(schedule.seen_classes(t)) - len(schedule.task_classes(t))
        y = np.array([out_idx[int(c)] for c in view.train.labels], dtype=np.int64)
        cached = store.cached() if opts.distill else None
        traces = []
        for s_i, stream in enumerate(streams):
            targets = None
            if t > 0:
                stream.net = expand_output(stream.net, schedule.increment, _rng(opts.seed, t, s_i, 1))
            if cached is not None:
                targets = snapshot_targets(stream.net.snapshot(), cached.inputs(stream.source), n_old)
            def tag(rec, t=t, s_i=s_i):
                if on_step is not None:
                    on_step({"task": t, "stream": s_i, **rec})
            updates_before = stream.net.updates
            tr = train_task(
                stream.net,
                view.train.inputs(stream.source),
                y,
                cfg,
                _rng(opts.seed, t, s_i, 2),
                cached.inputs(stream.source) if cached is not None else None,
                targets,
                tag,
            )
            if targets is not None:
                result.snapshot_checks.append((targets.captured_at_update, updates_before))
            traces.append(tr.lr_by_epoch)
        result.lr_traces.append(traces)

        new = {int(c): view.train.of_classes([c]) for c in schedule.task_classes(t)}
        store = update_store(store, new, extractor)
        result.store = store
        means = None
        if not store.is_empty():
            means = compute_mean_matrix(store, extractor, opts.renormalize_means, extractor.stream_dims)
        result.means = means
        seen = schedule.seen_classes(t)
        for j, te in enumerate(view.tests):
            bp = _predict(te, extractor, means, seen)
            R[t, j] = bp.accuracy()
        if on_task_end is not None:
            on_task_end(t, result)

    test = manifest.select(dataset, "test").of_classes(schedule.seen_classes(schedule.num_tasks - 1))
    result.test_predictions = _predict(test, extractor, result.means, schedule.seen_classes(schedule.num_tasks - 1))
    return result


def _predict(ds: Dataset, extractor: FeatureExtractor, means: FeatureMeanMatrix | None, seen: list[int]):
    if means is None:
        return classify_softmax(ds, extractor.streams, seen)
    return classify_batch(ds, extractor, means)


def run_joint(
    dataset: Dataset,
    manifest: DatasetManifest,
    schedule: TaskSchedule,
    config: TrainConfig,
    opts: RunOptions,
    on_step: Callable[[dict], None] | None = None,
    on_task_end: Callable[[int, RunResult], None] | None = None,
) -> RunResult:
    """Upper-bound baseline: one task over every scheduled class.

    ``R`` is 1x1 (all test data). Accuracies on each test partition of the
    incremental schedule are kept for both NME and the softmax head.
    """
    joint = TaskSchedule(schedule.total_classes, 0, 0, schedule.class_permutation[: schedule.total_classes])
    res = run_schedule(dataset, manifest, joint, (config, config), opts, on_step, on_task_end)
    test = manifest.select(dataset, "test")
    seen = joint.seen_classes(0)
    per_nme, per_soft = [], []
    for t in range(schedule.num_tasks):
        te = test.of_classes(schedule.task_classes(t))
        per_nme.append(_predict(te, _extractor_for(res), res.means, seen).accuracy())
        per_soft.append(classify_softmax(te, res.streams, seen).accuracy())
    res.per_task_softmax = per_soft
    res.per_task_nme = per_nme
    return res


def _extractor_for(res: RunResult) -> FeatureExtractor:
    return FeatureExtractor(res.streams, res.norm_stats)
