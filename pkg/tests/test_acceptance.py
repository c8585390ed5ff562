"""Acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible in
``pytest -v`` output) before asserting. The GrQc criteria need the SNAP
``CA-GrQc.txt`` edge list; point ``HMLDM_GRQC`` at it. Without the file they
print FAIL and are reported as expected failures rather than passes.
"""

import math
import os
import time
import warnings
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from conftest import (
    brute_force_ari,
    brute_force_auc,
    brute_force_log_likelihood,
    brute_force_nmi,
    finite_difference_gradient,
    random_graph,
    relative_gradient_error,
)
from hmldm.graph import (
    Graph,
    generate_bipartite_blocks,
    generate_planted_partition,
    is_connected,
    read_edge_list,
    split_for_link_prediction,
)
from hmldm.metrics import (
    ari,
    auc_roc,
    hard_assignments,
    membership_alignment,
    nmi,
    reorder_adjacency,
)
from hmldm.model import (
    ModelConfig,
    ModelState,
    eigenmodel_log_rate,
    embeddings,
    gradient,
    init_state,
    log_likelihood,
    log_rate,
)
from hmldm.train import (
    DEFAULT_DELTA_SQUARED_GRID,
    TrainConfig,
    auto_select_identifiable,
    evaluate_split,
    fit,
    sweep_delta,
)

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


def _grqc_path():
    candidates = [os.environ.get("HMLDM_GRQC"), Path(__file__).parent / "data" / "CA-GrQc.txt"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None


def _require_grqc(number, report):
    path = _grqc_path()
    if path is None:
        report(number, False, "GrQc edge list not available (set HMLDM_GRQC); criterion not evaluated")
        pytest.xfail("GrQc dataset unavailable offline")
    return read_edge_list(path, drop_self_loops=True)


# GrQc runs use one restart and 1000 iterations per delta; see README
GRQC_TRAIN = TrainConfig(iterations=1000, restarts=1, deterministic=False)


def test_criterion_1_grqc_link_prediction(report):
    g = _require_grqc(1, report)
    t0 = time.perf_counter()
    means = {}
    for p in (1, 2):
        aucs = []
        for seed in range(5):
            split = split_for_link_prediction(g, 0.5, seed=seed)
            recs = sweep_delta(
                split,
                ModelConfig(8, p=p, seed=seed),
                GRQC_TRAIN,
                [math.sqrt(d2) for d2 in DEFAULT_DELTA_SQUARED_GRID],
                stop_at_identifiable=True,
            )
            aucs.append(auto_select_identifiable(recs).auc_roc)
        means[p] = float(np.mean(aucs))
    minutes = (time.perf_counter() - t0) / 60
    ok = means[1] >= 0.92 and means[2] >= 0.92
    report(1, ok, f"mean AUC-ROC p=1 {means[1]:.4f}, p=2 {means[2]:.4f} (>= 0.92); {minutes:.1f} min")
    assert ok


def test_criterion_2_grqc_large_delta(report):
    g = _require_grqc(2, report)
    split = split_for_link_prediction(g, 0.5, seed=0)
    model = fit(split.train, ModelConfig(8, p=1, delta=math.sqrt(1000.0)), GRQC_TRAIN)
    roc, _ = evaluate_split(model.state, split)
    ok = roc >= 0.94 - 0.015
    report(2, ok, f"AUC-ROC {roc:.4f} at delta^2=1000 (>= 0.925)")
    assert ok


def test_criterion_3_champion_phase(planted, report):
    grid = [math.sqrt(d2) for d2 in DEFAULT_DELTA_SQUARED_GRID]
    tc = TrainConfig(iterations=1000, restarts=1)
    curves = {}
    for p in (1, 2):
        recs = sweep_delta(planted.graph, ModelConfig(3, p=p, seed=1), tc, grid)
        curves[p] = {round(r.delta_squared, 6): r.champion_fraction for r in recs}
    mid = 4.0
    checks = {
        p: (curves[p][min(curves[p])] >= 0.90, curves[p][max(curves[p])] <= 0.10) for p in (1, 2)
    }
    crossover = curves[2][mid] < curves[1][mid]
    ok = all(all(c) for c in checks.values()) and crossover
    detail = "; ".join(
        f"p={p}: smallest {curves[p][min(curves[p])]:.3f}, largest {curves[p][max(curves[p])]:.3f}"
        for p in (1, 2)
    )
    report(3, ok, f"{detail}; at delta^2={mid}: p=2 {curves[2][mid]:.3f} < p=1 {curves[1][mid]:.3f}")
    assert ok


def test_criterion_4_community_recovery(planted, report):
    t0 = time.perf_counter()
    model = fit(planted.graph, ModelConfig(3, p=1, delta=1.0), TrainConfig(iterations=1000, restarts=5))
    part = hard_assignments(model.state)
    score_nmi, score_ari = nmi(part, planted.labels), ari(part, planted.labels)
    elapsed = time.perf_counter() - t0
    ok = score_nmi >= 0.95 and score_ari >= 0.95 and elapsed < 120
    report(4, ok, f"NMI {score_nmi:.4f}, ARI {score_ari:.4f} (>= 0.95) in {elapsed:.1f} s (< 120 s)")
    assert ok


def test_criterion_5_gradient(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(20):
        n = int(rng.integers(3, 11))
        dim = int(rng.integers(1, 4))
        p = (1, 2)[k % 2]
        delta = (0.1, 1.0, 10.0)[k % 3]
        g = random_graph(rng, n, 0.4)
        state = ModelState(
            rng.normal(size=(n, dim + 1)), rng.normal(scale=0.5, size=n), ModelConfig(dim, p=p, delta=delta)
        )
        grad = gradient(state, g)
        err = relative_gradient_error((grad.logits, grad.gamma), finite_difference_gradient(state, g))
        worst = max(worst, err)
    ok = worst < 1e-4
    report(5, ok, f"max relative error {worst:.2e} over 20 instances (< 1e-4)")
    assert ok


def test_criterion_6_eigenmodel_identity(report):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(2, 8))
        dim = int(rng.integers(1, 6))
        config = ModelConfig(dim, p=2, delta=float(rng.choice([0.1, 1.0, 3.0, 10.0])))
        state = ModelState(
            rng.normal(scale=3, size=(n, dim + 1)), rng.normal(size=n), config
        )
        i, j = rng.choice(n, size=2, replace=False)
        worst = max(worst, abs(log_rate(state, i, j) - eigenmodel_log_rate(state, i, j)))
    ok = worst < 1e-10
    report(6, ok, f"max |difference| {worst:.2e} over 10^4 draws (< 1e-10)")
    assert ok


def test_criterion_7_likelihood_oracle(report):
    rng = np.random.default_rng(7)
    worst, count = 0.0, 0
    for n in range(2, 7):
        pairs = list(combinations(range(n), 2))
        states = [
            ModelState(rng.normal(size=(n, 3)), rng.normal(scale=0.5, size=n), ModelConfig(2, p=p, delta=1.3))
            for p in (1, 2)
        ]
        for mask in range(1 << len(pairs)):
            edges = [pairs[b] for b in range(len(pairs)) if mask >> b & 1]
            g = Graph(n, edges)
            state = states[mask % 2]
            exact = brute_force_log_likelihood(state, g)
            worst = max(worst, abs(log_likelihood(state, g) - exact) / abs(exact))
            count += 1
    ok = worst <= 1e-12
    report(7, ok, f"max relative deviation {worst:.2e} over all {count} graphs with n <= 6 (<= 1e-12)")
    assert ok


def test_criterion_8_permutation_invariance(report):
    rng = np.random.default_rng(8)
    bitwise = True
    for trial in range(20):
        n = int(rng.integers(5, 200))
        g = random_graph(rng, n, 0.1)
        state = ModelState(
            rng.normal(size=(n, 5)), rng.normal(size=n), ModelConfig(4, p=(1, 2)[trial % 2], delta=2.0)
        )
        ll = log_likelihood(state, g)
        permuted = state.with_params(state.logits[:, rng.permutation(5)], state.gamma)
        bitwise &= log_likelihood(permuted, g) == ll

    lg = generate_planted_partition(120, 3, 0.6, 0.02, seed=8)
    tc = TrainConfig(iterations=800, restarts=1)
    fits = [fit(lg.graph, ModelConfig(2, delta=1.0, seed=s), tc) for s in (11, 22)]
    corr, _ = membership_alignment(embeddings(fits[0].state), embeddings(fits[1].state))
    ok = bitwise and corr > 0.95
    report(8, ok, f"bitwise-equal LL under column permutation: {bitwise}; aligned correlation {corr:.4f} (> 0.95)")
    assert ok


def _connected_random_graph(rng, n):
    """Random graph made connected by overlaying a random Hamiltonian path."""
    g = random_graph(rng, n, float(rng.uniform(0.05, 0.6)))
    order = rng.permutation(n)
    path = np.stack([order[:-1], order[1:]], axis=1)
    return Graph(n, np.concatenate([g.edges, path]))


def test_criterion_9_split_protocol(report):
    failures = []
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        g = _connected_random_graph(rng, int(rng.integers(3, 40)))
        fraction = float(rng.uniform(0.1, 0.9))
        with warnings.catch_warnings():
            # short removals and thin negative pools warn by design
            warnings.simplefilter("ignore")
            split = split_for_link_prediction(g, fraction, seed=seed)
        train = split.train.edge_set()
        pos = set(map(tuple, split.test_positives.tolist()))
        neg = set(map(tuple, split.test_negatives.tolist()))
        removable = g.n_edges - (g.n_nodes - 1)
        wanted = min(math.floor(fraction * g.n_edges), removable)
        problems = []
        if not is_connected(split.train):
            problems.append("residual disconnected")
        if len(pos) != wanted or split.short != (wanted < math.floor(fraction * g.n_edges)):
            problems.append(f"{len(pos)} positives, wanted {wanted}")
        if train & pos or train & neg or pos & neg:
            problems.append("overlap between train, positives and negatives")
        if train | pos != g.edge_set() or neg & g.edge_set():
            problems.append("edge sets not partitioned")
        if len(neg) != min(len(pos), g.n_pairs - g.n_edges):
            problems.append("negative count")
        if problems:
            failures.append((seed, problems))
    ok = not failures
    report(9, ok, f"{1000 - len(failures)}/1000 seeds satisfy the split properties")
    assert ok, failures[:5]


def test_criterion_10_metric_oracles(report):
    rng = np.random.default_rng(10)
    auc_exact = True
    worst = 0.0
    for _ in range(100):
        pos = rng.integers(0, 8, size=int(rng.integers(1, 15))).astype(float).tolist()
        neg = rng.integers(0, 8, size=int(rng.integers(1, 15))).astype(float).tolist()
        auc_exact &= auc_roc(pos, neg) == brute_force_auc(pos, neg)
        size = int(rng.integers(2, 25))
        a = rng.integers(0, int(rng.integers(1, 5)), size).tolist()
        b = rng.integers(0, int(rng.integers(1, 5)), size).tolist()
        worst = max(worst, abs(nmi(a, b) - brute_force_nmi(a, b)), abs(ari(a, b) - brute_force_ari(a, b)))
    ok = auc_exact and worst <= 1e-12
    report(10, ok, f"AUC exact on 100 instances: {auc_exact}; max NMI/ARI deviation {worst:.2e} (<= 1e-12)")
    assert ok


def test_criterion_11_bipartite(report):
    g, row_labels, col_labels = generate_bipartite_blocks(80, 100, 3, 0.5, 0.03, seed=11)
    config = ModelConfig(2, delta=1.0, seed=11)
    tc = TrainConfig(iterations=800, restarts=3)
    model = fit(g, config, tc)
    start = init_state(config, g.n_nodes, seed=model.restarts[0].seed, graph=g)
    ll0 = log_likelihood(start, g)
    ro = reorder_adjacency(g, hard_assignments(model.state), config.n_communities)
    diag, off = ro.diagonal_density(), ro.off_diagonal_density()
    planted = np.concatenate([row_labels, col_labels])
    found = hard_assignments(model.state)
    ok = model.best_ll > ll0 and diag > 5 * off
    report(
        11,
        ok,
        f"LL {ll0:.1f} -> {model.best_ll:.1f}; block density diagonal {diag:.3f} vs off-diagonal {off:.4f} "
        f"(ratio > 5); NMI vs planted {nmi(found, planted):.3f}",
    )
    assert ok
