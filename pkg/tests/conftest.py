import math
from collections import Counter
from itertools import combinations

import numpy as np
import pytest

from hmldm.graph import Graph, generate_planted_partition, load_edge_list
from hmldm.model import ModelConfig, ModelState


@pytest.fixture
def triangle():
    return load_edge_list("0 1\n1 2\n2 0")


@pytest.fixture(scope="session")
def planted():
    """The n=400, k=4 planted partition used throughout the acceptance checks."""
    return generate_planted_partition(400, 4, 0.2, 0.01, seed=0)


def state_from_embeddings(W, gamma, config, n_rows=None):
    """State whose softmax reproduces ``W`` (zeros become ~1e-300)."""
    W = np.asarray(W, dtype=np.float64)
    logits = np.log(np.maximum(W, 1e-300))
    return ModelState(logits, np.asarray(gamma, dtype=np.float64), config, n_rows)


def random_graph(rng, n, density=0.5):
    i, j = np.triu_indices(n, 1)
    keep = rng.random(len(i)) < density
    return Graph(n, np.stack([i[keep], j[keep]], axis=1))


# ---------------------------------------------------------------- oracles


def brute_force_log_likelihood(state, g):
    """Poisson log-likelihood summed pair by pair in plain Python."""
    W = np.exp(state.logits - state.logits.max(axis=1, keepdims=True))
    W = W / W.sum(axis=1, keepdims=True)
    edges = g.edge_set()
    if g.bipartite:
        pairs = [(i, j) for i in range(g.n_rows) for j in range(g.n_rows, g.n_nodes)]
    else:
        pairs = list(combinations(range(g.n_nodes), 2))
    p, delta = state.config.p, state.config.delta
    total = 0.0
    for i, j in pairs:
        dist = math.sqrt(sum((a - b) ** 2 for a, b in zip(W[i].tolist(), W[j].tolist())))
        lr = state.gamma[i] + state.gamma[j] - delta**p * dist**p
        y = 1 if (i, j) in edges else 0
        total += y * lr - math.exp(lr) - math.lgamma(y + 1)
    return total


def brute_force_auc(pos, neg):
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_force_auc_pr(pos, neg):
    scored = [(s, 1) for s in pos] + [(s, 0) for s in neg]
    points = []
    for t in sorted({s for s, _ in scored}, reverse=True):
        tp = sum(1 for s, y in scored if s >= t and y == 1)
        fp = sum(1 for s, y in scored if s >= t and y == 0)
        points.append((tp / len(pos), tp / (tp + fp)))
    area, prev_r, prev_p = 0.0, 0.0, points[0][1]
    for r, pr in points:
        area += (r - prev_r) * (pr + prev_p) / 2
        prev_r, prev_p = r, pr
    return area


def brute_force_nmi(a, b):
    n = len(a)
    ca, cb, cab = Counter(a), Counter(b), Counter(zip(a, b))
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    if ha == 0 and hb == 0:
        return 1.0
    mi = sum(c / n * math.log((c / n) / (ca[x] / n * cb[y] / n)) for (x, y), c in cab.items())
    return mi / ((ha + hb) / 2) if ha + hb > 0 else 0.0


def brute_force_ari(a, b):
    """Adjusted Rand from raw pair agreement counts."""
    n = len(a)
    pairs = list(combinations(range(n), 2))
    same_a = [a[i] == a[j] for i, j in pairs]
    same_b = [b[i] == b[j] for i, j in pairs]
    both = sum(x and y for x, y in zip(same_a, same_b))
    sa, sb, total = sum(same_a), sum(same_b), len(pairs)
    expected = sa * sb / total
    maximum = (sa + sb) / 2
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)


def finite_difference_gradient(state, g, h=1e-5):
    """Central finite differences of the exact log-likelihood."""
    from hmldm.model import log_likelihood

    out = []
    for name in ("logits", "gamma"):
        base = getattr(state, name)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            values = {}
            for sign in (1, -1):
                arr = base.copy()
                arr[idx] += sign * h
                params = {"logits": state.logits, "gamma": state.gamma, name: arr}
                values[sign] = log_likelihood(state.with_params(**params), g)
            grad[idx] = (values[1] - values[-1]) / (2 * h)
        out.append(grad)
    return tuple(out)


def relative_gradient_error(analytic, numeric):
    a = np.concatenate([x.ravel() for x in analytic])
    f = np.concatenate([x.ravel() for x in numeric])
    return float(np.max(np.abs(a - f)) / max(np.max(np.abs(f)), 1e-12))
