"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in pytest's terminal summary (see conftest.py) and by
``python3 tests/test_acceptance.py``.
"""

import itertools
import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import pytest

from catnet import benchmark
from catnet.cli import main
from catnet.config import parse_config
from catnet.evaluate import AccuracyMatrix, compute_bwt, compute_mean_accuracy
from catnet.exemplar import FeatureMeanMatrix, herd_select
from catnet.classify import nme_classify
from catnet.nnkernel import Layer, Network, expand_output, extract_features, init_network, softmax
from catnet.runner import execute
from catnet.trainer import task_loss
from oracles import central_diff, herd_brute, nearest_scan, rel_err

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(5)
RESULTS: dict[int, str] = {}


def record(n: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(RESULTS[n])


# -- 1 ---------------------------------------------------------------------


def test_c01_gradient_fidelity():
    rng = np.random.default_rng(101)
    shapes = [(3, 4, 2), (5, 6, 4, 3), (2, 3), (4, 8, 8, 5), (6, 3, 4, 4), (3, 5, 5, 5, 6)]
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for sizes in shapes:
        n_old = max(1, sizes[-1] - 2)
        net = expand_output(init_network(list(sizes[:-1]) + [n_old], rng), sizes[-1] - n_old, rng)
        for _ in range(3):
            x = rng.normal(size=(2, sizes[0]))
            y = rng.integers(0, sizes[-1], 2)
            cx = rng.normal(size=(2, sizes[0]))
            q = softmax(rng.normal(size=(2, n_old)))
            res = task_loss(net, x, y, cx, q)
            numeric = central_diff(lambda: task_loss(net, x, y, cx, q).loss, net.params(), h=1e-5)
            for A, N in zip(res.grads, numeric):
                worst = max(worst, max(rel_err(a, b) for a, b in zip(A.ravel(), N)))
            cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30
    record(1, "gradient fidelity", ok, f"{len(shapes)} shapes x 3 inputs, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert cases >= 15 and worst < 1e-4 and elapsed < 30


# -- 2 ---------------------------------------------------------------------


def herding_fixtures():
    rng = np.random.default_rng(202)
    for n, d, k in itertools.product(range(1, 9), range(1, 5), range(1, 5)):
        f = rng.normal(size=(n, d))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        if n >= 3 and (n + d + k) % 5 == 0:
            f[n - 1] = f[0]  # duplicate row: exercises tie handling
        yield f, k


def test_c02_herding_oracle():
    cases = mismatches = 0
    for f, k in herding_fixtures():
        got = herd_select(list(range(len(f))), f, k)
        if got != herd_brute(f.tolist(), k):
            mismatches += 1
        cases += 1
    ok = cases >= 100 and mismatches == 0
    record(2, "herding oracle", ok, f"{cases} exhaustive fixtures, {mismatches} mismatches")
    assert ok


# -- 3 ---------------------------------------------------------------------


def test_c03_nme_oracle():
    rng = np.random.default_rng(303)
    mismatches = 0
    for _ in range(1000):
        n, d = int(rng.integers(1, 13)), int(rng.integers(1, 17))
        means = rng.normal(size=(n, d))
        classes = rng.permutation(100)[:n].tolist()
        q = rng.normal(size=d)
        if nme_classify(q, FeatureMeanMatrix(classes, means)) != classes[nearest_scan(q.tolist(), means.tolist())]:
            mismatches += 1
    record(3, "NME oracle", mismatches == 0, f"1000 random cases, {mismatches} mismatches")
    assert mismatches == 0


# -- 4 ---------------------------------------------------------------------

# (rows of the lower triangle, hand-computed BWT, hand-computed mean accuracy)
METRIC_FIXTURES = [
    ([[0.95], [0.8, 0.9], [0.7, 0.9, 0.8]], 0.8, 0.8),
    ([[1.0], [0.5, 1.0]], 0.5, 0.75),
    ([[0.9], [0.6, 0.8]], 0.6, 0.7),
    ([[1.0], [1.0, 1.0], [1.0, 1.0, 1.0]], 1.0, 1.0),
    ([[0.5], [0.0, 0.5], [0.0, 0.0, 0.9]], 0.0, 0.3),
    ([[0.9], [0.9, 0.8], [0.6, 0.6, 0.7], [0.3, 0.3, 0.9, 0.5]], 0.6, 0.5),
    ([[1.0], [0.25, 1.0], [0.25, 0.25, 1.0], [0.25, 0.25, 0.25, 1.0], [0.25, 0.25, 0.25, 0.25, 1.0]], 0.25, 0.4),
    ([[0.0], [0.0, 0.0]], 0.0, 0.0),
    ([[0.93], [0.81, 0.77]], 0.81, 0.79),
    ([[0.7], [0.2, 0.6], [0.5, 0.8, 0.2]], 0.5, 0.5),
    ([[0.5]] + [[0.125] * i + [0.5] for i in range(1, 6)], 0.125, 0.1875),
    ([[0.95]], None, 0.95),
]


def as_matrix(rows):
    n = len(rows)
    return AccuracyMatrix.from_list([list(r) + [None] * (n - len(r)) for r in rows])


def test_c04_metric_arithmetic():
    bad = []
    for rows, bwt, mean in METRIC_FIXTURES:
        r = as_matrix(rows)
        if bwt is None:
            try:
                compute_bwt(r)
                bad.append((rows, "single-task BWT did not raise"))
            except ValueError:
                pass
        elif compute_bwt(r) != bwt:
            bad.append((rows, f"bwt {compute_bwt(r)!r} != {bwt}"))
        if compute_mean_accuracy(r) != mean:
            bad.append((rows, f"mean {compute_mean_accuracy(r)!r} != {mean}"))
    ok = not bad and len(METRIC_FIXTURES) >= 10
    record(4, "metric arithmetic", ok, f"{len(METRIC_FIXTURES)} fixtures, exact equality, {len(bad)} mismatches")
    assert ok, bad


# -- benchmark runs shared by 5-8 and 11 ------------------------------------

VARIANTS = {
    "catnet": ("catnet", "two_stream", {}),
    "finetune": ("finetune_only", "two_stream", {}),
    "joint": ("joint", "two_stream", {}),
    "one_stream:0": ("catnet", "one_stream:0", {}),
    "one_stream:1": ("catnet", "one_stream:1", {}),
    "rgb_d_concat": ("catnet", "rgb_d_concat", {}),
    "catnet_k0_nodistill": ("catnet", "two_stream", {"capacity_k": 0, "distill": False}),
}


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    base = tmp_path_factory.mktemp("bench")
    docs, seconds = {}, {}
    for name, (method, mode, over) in VARIANTS.items():
        seconds[name] = 0.0
        for seed in SEEDS:
            doc = benchmark.config_doc(method, mode, seed, **over)
            t0 = time.perf_counter()
            docs[name, seed] = execute(parse_config(doc), base / f"{name.replace(':', '_')}-{seed}")
            seconds[name] += time.perf_counter() - t0
    return docs, seconds


def test_c05_forgetting_benchmark(bench):
    docs, seconds = bench
    bwt_cat = np.mean([docs["catnet", s]["bwt"] for s in SEEDS])
    bwt_ft = np.mean([docs["finetune", s]["bwt"] for s in SEEDS])
    wins = sum(docs["catnet", s]["mean_accuracy"] >= docs["finetune", s]["mean_accuracy"] for s in SEEDS)
    runtime = seconds["catnet"] + seconds["finetune"]
    ok = bwt_cat - bwt_ft >= 0.15 and wins >= 4 and runtime < 180
    record(
        5,
        "forgetting benchmark",
        ok,
        f"mean BWT catnet {bwt_cat:.4f} vs finetune {bwt_ft:.4f} (gap {bwt_cat - bwt_ft:.4f}), "
        f"accuracy wins {wins}/5, {runtime:.1f}s",
    )
    assert ok


def test_c06_joint_upper_bound(bench):
    docs, _ = bench
    accs = [(docs["joint", s]["mean_accuracy"], docs["catnet", s]["mean_accuracy"]) for s in SEEDS]
    wins = sum(j >= c - 0.02 for j, c in accs)
    detail = ", ".join(f"{j:.3f}/{c:.3f}" for j, c in accs)
    record(6, "joint upper bound", wins >= 4, f"joint/catnet per seed {detail}; {wins}/5 within bound")
    assert wins >= 4


def test_c07_two_stream_advantage(bench):
    docs, _ = bench
    wins = sum(
        all(docs["catnet", s]["mean_accuracy"] >= docs[m, s]["mean_accuracy"] for m in ("one_stream:0", "one_stream:1"))
        for s in SEEDS
    )
    means = {m: np.mean([docs[m, s]["mean_accuracy"] for s in SEEDS]) for m in ("catnet", "one_stream:0", "one_stream:1", "rgb_d_concat")}
    detail = ", ".join(f"{'two_stream' if k == 'catnet' else k} {v:.3f}" for k, v in means.items())
    record(7, "two-stream advantage", wins >= 4, f"{wins}/5 seeds; averages {detail}")
    assert wins >= 4


def test_c08_feature_norm_invariant(bench, caplog):
    docs, _ = bench
    norms = [d["feature_norm"] for d in docs.values()]
    count = sum(n["count"] for n in norms)
    worst = max(n["max_deviation"] for n in norms)
    zeros = sum(n["zero_norm"] for n in norms)
    # zero-norm path: an all-zero hidden layer yields a zero feature, flagged and logged
    net = Network([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.ones((2, 3)), np.zeros(2), "identity")])
    with caplog.at_level(logging.WARNING, logger="catnet"):
        fb = extract_features(net, np.ones((4, 2)))
    flagged = bool(fb.zero_norm.all()) and not fb.features.any() and "zero-norm" in caplog.text
    ok = count > 0 and worst < 1e-6 and zeros == 0 and flagged
    record(8, "feature-norm invariant", ok, f"{count} features, max |norm-1| {worst:.1e}, zero-norm path flagged={flagged}")
    assert ok


def test_c11_degenerate_equivalence(bench):
    docs, _ = bench
    skip = {"run_id", "config_digest", "method"}
    same = all(
        {k: v for k, v in docs["catnet_k0_nodistill", s].items() if k not in skip}
        == {k: v for k, v in docs["finetune", s].items() if k not in skip}
        for s in SEEDS
    )
    record(11, "degenerate-config equivalence", same, "catnet K=0 no distillation vs finetune_only, 5 seeds, all metric fields")
    assert same


# -- 9, 10 -----------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = ROOT / "configs" / "catnet_synthetic_inline.toml"
    codes = [main(["run", "--config", str(cfg), "--out", str(base / name)]) for name in ("a", "b")]
    return codes, base / "a", base / "b"


def test_c09_determinism(cli_runs):
    codes, a, b = cli_runs
    da, db = (json.loads((d / "metrics.json").read_text()) for d in (a, b))
    same = (
        codes == [0, 0]
        and (a / "R.csv").read_bytes() == (b / "R.csv").read_bytes()
        and np.array(da["R"], dtype=float).tobytes() == np.array(db["R"], dtype=float).tobytes()
        and da["config_digest"] == db["config_digest"]
    )
    record(9, "determinism", same, f"two cmd_run executions, digest {da['config_digest'][:12]}, R identical={same}")
    assert same


def test_c10_lr_schedule(cli_runs):
    _, a, _ = cli_runs
    doc = json.loads((a / "metrics.json").read_text())
    want0 = [0.001] * 24 + [0.0001] * 26
    wanti = [0.001] * 5 + [0.0001] * 7
    traces = doc["lr_traces"]
    ok = traces[0] == [want0] * len(traces[0]) and all(t == [wanti] * len(t) for t in traces[1:])
    logged = {}
    for line in (a / "train_log.jsonl").read_text().splitlines():
        r = json.loads(line)
        logged.setdefault((r["task"], r["stream"], r["epoch"]), set()).add(r["lr"])
    for (t, s, e), lrs in logged.items():
        ok &= lrs == {(want0 if t == 0 else wanti)[e - 1]}
    ok &= {e for (t, _, e) in logged if t == 0} == set(range(1, 51))
    ok &= {e for (t, _, e) in logged if t > 0} == set(range(1, 13))
    record(10, "LR schedule conformance", ok, f"{len(traces)} tasks, per-epoch trace and every logged step checked")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
