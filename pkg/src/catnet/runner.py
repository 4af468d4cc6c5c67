"""Run directories: execute a configured experiment and write its artifacts.

Layout of ``<out>/``::

    config.json          canonical config (what the digest hashes)
    train_log.jsonl      one line per optimizer step
    checkpoints/         task_<t>_stream_<s>.catn, exemplars_task_<t>.json
    metrics.json         R, BWT, mean/initial accuracy, diagnostics
    R.csv                accuracy matrix
    predictions.csv      final model on the whole test split
    feature_means.json   final class-mean matrix (absent when K == 0)
    INCOMPLETE           present only while running or after a failure
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from pathlib import Path

from .classify import write_predictions
from .config import ConfigError, RunConfig
from .evaluate import AccuracyMatrix, exact_mean, MetricsReport, metrics_document, metrics_from_matrix, write_matrix_csv
from .nnkernel import dumps_network
from .trainer import RunResult, parse_mode, run_joint, run_schedule

log = logging.getLogger(__name__)

MARKER = "INCOMPLETE"


class RunDirExists(FileExistsError):
    pass


def atomic_write(path: Path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def prepare_dir(out: Path, force: bool) -> None:
    if out.exists():
        if not force:
            raise RunDirExists(f"{out} already exists (use --force to overwrite)")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def check_compatible(cfg: RunConfig, dataset, schedule) -> None:
    for src in parse_mode(cfg.mode):
        if src != "concat" and int(src) >= len(dataset.modalities):
            raise ValueError(f"mode {cfg.mode} needs modality {src}, dataset has {len(dataset.modalities)}")
    if cfg.mode == "two_stream" and len(dataset.modalities) != 2:
        raise ValueError("two_stream needs a 2-modality dataset")
    if schedule.total_classes > dataset.num_classes:
        raise ValueError(f"schedule needs {schedule.total_classes} classes, dataset has {dataset.num_classes}")


def execute(cfg: RunConfig, out, force: bool = False) -> dict:
    """Run ``cfg`` into directory ``out`` and return the metrics document."""
    out = Path(out)
    dataset, manifest = cfg.load_data()
    try:
        schedule = cfg.task_schedule(dataset.num_classes)
        check_compatible(cfg, dataset, schedule)
    except ValueError as e:
        raise ConfigError(f"config does not fit dataset: {e}") from None
    prepare_dir(out, force)
    (out / MARKER).write_text("run started; not finished\n")
    ckpt = out / "checkpoints"
    ckpt.mkdir()
    digest = cfg.digest()
    run_id = f"{cfg.method}-{digest[:12]}"
    atomic_write(out / "config.json", _json(cfg.canonical()))
    atomic_write(out / "manifest.json", _json(manifest.to_dict()))
    opts = cfg.run_options()
    log_fh = open(out / "train_log.jsonl", "w")

    def on_step(rec: dict) -> None:
        log_fh.write(json.dumps(rec) + "\n")

    def on_task_end(t: int, res: RunResult) -> None:
        for s, stream in enumerate(res.streams):
            atomic_write(ckpt / f"task_{t}_stream_{s}.catn", dumps_network(stream.net))
        res.store.save(ckpt / f"exemplars_task_{t}.json")
        log.info("task %d done: R row %s", t, [round(v, 4) for v in res.R.row(t)])

    try:
        if cfg.method == "joint":
            res = run_joint(dataset, manifest, schedule, cfg.train_initial, opts, on_step, on_task_end)
            metrics = MetricsReport(
                mean_accuracy=exact_mean(res.per_task_nme),
                initial_accuracy=res.R[0, 0],
                per_task_final=res.per_task_nme,
                micro_accuracy=res.R[0, 0],
                extra={"per_task_final_softmax": res.per_task_softmax},
            )
        else:
            res = run_schedule(
                dataset, manifest, schedule, (cfg.train_initial, cfg.train_incremental), opts, on_step, on_task_end
            )
            metrics = metrics_from_matrix(res.R, res.test_predictions.accuracy())
    finally:
        log_fh.close()

    metrics.extra.update(
        {
            "method": cfg.method,
            "mode": cfg.mode,
            "n_tasks": schedule.num_tasks,
            "task_classes": [schedule.task_classes(t) for t in range(schedule.num_tasks)],
            "classifier": "nme" if res.means is not None else "softmax",
            "excluded_samples": res.test_predictions.n_excluded,
            "feature_norm": {
                "count": res.norm_stats.count,
                "zero_norm": res.norm_stats.zero_norm,
                "max_deviation": res.norm_stats.max_deviation,
            },
            "lr_traces": res.lr_traces,
        }
    )
    doc = metrics_document(run_id, digest, res.R, metrics)
    write_matrix_csv(out / "R.csv", res.R)
    write_predictions(out / "predictions.csv", res.test_predictions)
    if res.means is not None:
        means = {
            "classes": res.means.classes,
            "stream_dims": res.means.stream_dims,
            "means": res.means.means.tolist(),
        }
        atomic_write(out / "feature_means.json", json.dumps(means) + "\n")
    atomic_write(out / "metrics.json", _json(doc))
    (out / MARKER).unlink()
    return doc


def load_matrix(doc: dict) -> AccuracyMatrix:
    return AccuracyMatrix.from_list(doc["R"])
