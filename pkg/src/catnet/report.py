"""Human-readable summaries and figure files for finished runs."""

from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import numpy as np

from .evaluate import AccuracyMatrix, heatmap_pixels, write_pgm
from .exemplar import FeatureMeanMatrix
from .evaluate import summarize_means


class MissingArtifact(FileNotFoundError):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing run artifact: {path}")
    return path


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingArtifact(f"run directory not found: {run_dir}")
    return json.loads(_need(run_dir / "metrics.json").read_text())


def _fmt(v) -> str:
    return "   -  " if v is None else f"{v:.4f}"


def summary_text(doc: dict) -> str:
    R = doc["R"]
    lines = [
        f"run {doc['run_id']}  method={doc.get('method', '?')}  mode={doc.get('mode', '?')}",
        f"config digest  {doc['config_digest']}",
        f"tasks          {len(R)}",
        f"BWT            {_fmt(doc.get('bwt'))}",
        f"mean accuracy  {_fmt(doc['mean_accuracy'])}",
        f"initial acc.   {_fmt(doc['initial_accuracy'])}",
        "",
        "accuracy matrix (row = model after task, column = test data of task)",
        ("      " + " ".join(f"  Te{j:<3d}" for j in range(len(R)))).rstrip(),
    ]
    for i, row in enumerate(R):
        lines.append(f"M{i:<4d} " + " ".join(_fmt(v) + " " for v in row).rstrip())
    lines.append("")
    lines.append("final model per task: " + " ".join(_fmt(v) for v in doc["per_task_final"]))
    return "\n".join(lines) + "\n"


def compare_text(a: dict, b: dict) -> str:
    rows = [
        ("run", a["run_id"], b["run_id"]),
        ("method", a.get("method", "?"), b.get("method", "?")),
        ("mode", a.get("mode", "?"), b.get("mode", "?")),
        ("tasks", str(len(a["R"])), str(len(b["R"]))),
        ("BWT", _fmt(a.get("bwt")), _fmt(b.get("bwt"))),
        ("mean accuracy", _fmt(a["mean_accuracy"]), _fmt(b["mean_accuracy"])),
        ("initial acc.", _fmt(a["initial_accuracy"]), _fmt(b["initial_accuracy"])),
    ]
    w1 = max(len(r[1]) for r in rows)
    return "\n".join(f"{k:<14} {x:<{w1}}  {y}".rstrip() for k, x, y in rows) + "\n"


def load_means(run_dir) -> FeatureMeanMatrix | None:
    p = Path(run_dir) / "feature_means.json"
    if not p.exists():
        return None
    d = json.loads(p.read_text())
    return FeatureMeanMatrix(d["classes"], np.asarray(d["means"], dtype=np.float64), d["stream_dims"])


def write_report(run_dir, force: bool = False, figures: bool = True) -> Path:
    """Write ``<run>/report/``: summary.txt, heatmap.pgm/.png and mean-summary CSV/PNG."""
    run_dir = Path(run_dir)
    doc = load_run(run_dir)
    out = run_dir / "report"
    if out.exists():
        if not force:
            raise FileExistsError(f"{out} already exists (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir()
    (out / "summary.txt").write_text(summary_text(doc))
    R = AccuracyMatrix.from_list(doc["R"])
    write_pgm(out / "heatmap.pgm", heatmap_pixels(R))
    means = load_means(run_dir)
    per_stream = summarize_means(means) if means is not None else []
    with open(out / "mean_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class"] + [f"stream_{s}" for s in range(len(per_stream))])
        if means is not None:
            for k, c in enumerate(means.classes):
                w.writerow([c] + [repr(float(v[k])) for v in per_stream])
    if figures:
        from . import plotting

        plotting.accuracy_heatmap(R.values, out / "heatmap.png", doc["run_id"])
        if means is not None:
            plotting.mean_summary(means.classes, per_stream, out / "mean_summary.png")
    return out
