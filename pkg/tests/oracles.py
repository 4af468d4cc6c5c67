"""Independent reference computations for the test suite.

Plain Python loops and ``math`` only; nothing here calls into catnet's numpy
paths, so agreement is meaningful.
"""

import math


def matvec(w, x):
    return [sum(w[r][c] * x[c] for c in range(len(x))) for r in range(len(w))]


def forward_scalar(layers, x):
    """layers: list of (weight rows, bias list, activation name)."""
    a = list(x)
    for w, b, act in layers:
        z = [v + bb for v, bb in zip(matvec(w, a), b)]
        a = [max(v, 0.0) for v in z] if act == "relu" else z
    m = max(a)
    e = [math.exp(v - m) for v in a]
    s = sum(e)
    return a, [v / s for v in e]


def mean_accumulate(vectors):
    acc = [0.0] * len(vectors[0])
    for v in vectors:
        for i, x in enumerate(v):
            acc[i] += x
    return [a / len(vectors) for a in acc]


def herd_brute(features, k):
    """Greedy herding re-evaluated from scratch at every step."""
    n = len(features)
    mu = mean_accumulate(features)
    chosen = []
    for step in range(1, min(k, n) + 1):
        best, best_val = None, None
        for cand in range(n):
            if cand in chosen:
                continue
            total = list(features[cand])
            for p in chosen:
                total = [a + b for a, b in zip(total, features[p])]
            val = math.sqrt(sum((m - t / step) ** 2 for m, t in zip(mu, total)))
            if best_val is None or val < best_val:
                best, best_val = cand, val
        chosen.append(best)
    return chosen


def nearest_scan(query, means):
    best, best_d = None, None
    for k, mu in enumerate(means):
        d = math.sqrt(sum((q - m) ** 2 for q, m in zip(query, mu)))
        if best_d is None or d < best_d:
            best, best_d = k, d
    return best


def central_diff(f, params, h=1e-5):
    """Numerical gradient of scalar f() w.r.t. every entry of each array in params (mutated in place)."""
    out = []
    for p in params:
        g = [0.0] * p.size
        flat = p.reshape(-1)
        for i in range(p.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, n, floor=1e-7):
    return abs(a - n) / max(abs(a), abs(n), floor)
