"""Link-prediction scores, partitions, champion diagnostics and reordering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .graph import Graph
from .model import ModelState, embeddings, log_rates

DEFAULT_TAU = 0.99


@dataclass(frozen=True)
class ScoredPairs:
    pairs: np.ndarray
    scores: np.ndarray
    label: str

    def __post_init__(self):
        if len(self.pairs) != len(self.scores):
            raise ValueError("pairs and scores differ in length")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")


def score_pairs(state: ModelState, pairs, label: str = "positive") -> ScoredPairs:
    """Score node pairs by their model log-rate."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return ScoredPairs(pairs, log_rates(state, pairs), label)


def _two_sided(pos, neg):
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    return pos, neg


def auc_roc(pos, neg) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals ``(#{p > n} + 0.5 #{p == n}) / (|pos| |neg|)``.
    """
    pos, neg = _two_sided(pos, neg)
    ranks = rankdata(np.concatenate([pos, neg]))
    # average ranks are multiples of 0.5, so u is exact
    u = float(np.sum(ranks[: len(pos)])) - len(pos) * (len(pos) + 1) / 2.0
    return u / (len(pos) * len(neg))


def precision_recall_curve(pos, neg) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at every distinct score threshold, highest first."""
    pos, neg = _two_sided(pos, neg)
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(1.0 - labels)
    # keep the last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), len(scores) - 1]
    tp, fp = tp[last], fp[last]
    return tp / (tp + fp), tp / len(pos)


def auc_pr(pos, neg) -> float:
    """Trapezoidal area under the precision-recall curve.

    The curve starts at recall 0 with the precision of the highest threshold.
    """
    precision, recall = precision_recall_curve(pos, neg)
    precision = np.r_[precision[0], precision]
    recall = np.r_[0.0, recall]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


# --------------------------------------------------------------------------
# partitions


def canonical_labels(labels) -> np.ndarray:
    """Relabel to dense ids ``0..k-1`` in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inverse.ravel()]


def hard_assignments(state: ModelState) -> np.ndarray:
    """Community of maximum membership per node; ties go to the lowest index."""
    return np.argmax(embeddings(state), axis=1)


def contingency(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"partitions differ in length ({len(a)} vs {len(b)})")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(a, b, average: str = "arithmetic") -> float:
    """Normalized mutual information.

    ``average`` picks the normaliser over the two entropies: ``arithmetic``
    (default), ``geometric``, ``max`` or ``min``. Two constant partitions score
    1.0 by convention.
    """
    if len(a) < 1:
        raise ValueError("partitions must be non-empty")
    table = contingency(a, b)
    n = table.sum()
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float(np.sum(pij * np.log(pij / outer)))
    if average == "arithmetic":
        norm = (ha + hb) / 2.0
    elif average == "geometric":
        norm = math.sqrt(ha * hb)
    elif average == "max":
        norm = max(ha, hb)
    elif average == "min":
        norm = min(ha, hb)
    else:
        raise ValueError(f"unknown average {average!r}")
    if norm == 0.0:
        return 0.0
    return min(1.0, max(0.0, mi / norm))


def ari(a, b) -> float:
    """Adjusted Rand index (permutation model)."""
    if len(a) < 2:
        raise ValueError("ARI needs at least two items")
    table = contingency(a, b)
    n = int(table.sum())

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return x * (x - 1) / 2.0

    sum_ij = float(np.sum(comb2(table)))
    sum_a = float(np.sum(comb2(table.sum(axis=1))))
    sum_b = float(np.sum(comb2(table.sum(axis=0))))
    expected = sum_a * sum_b / (n * (n - 1) / 2.0)
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        # both partitions are all-one-cluster or all-singletons
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


# --------------------------------------------------------------------------
# champions


@dataclass(frozen=True)
class ChampionReport:
    tau: float
    champion_fraction: float
    champions_per_community: tuple[int, ...]
    identifiable: bool

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "champion_fraction": self.champion_fraction,
            "champions_per_community": list(self.champions_per_community),
            "identifiable": self.identifiable,
        }


def champion_report(state: ModelState, tau: float = DEFAULT_TAU) -> ChampionReport:
    """Count nodes sitting (within ``tau``) on a simplex corner.

    Node ``i`` champions community ``d`` when ``w_id >= tau``. A solution is
    identifiable when every community has at least one champion.
    """
    if not 0.5 < tau <= 1.0:
        raise ValueError("tau must lie in (0.5, 1]")
    W = embeddings(state)
    hits = W >= tau
    counts = hits.sum(axis=0).astype(int)
    return ChampionReport(
        tau=float(tau),
        champion_fraction=float(counts.sum()) / len(W),
        champions_per_community=tuple(int(c) for c in counts),
        identifiable=bool(counts.min() >= 1),
    )


# --------------------------------------------------------------------------
# adjacency reordering


@dataclass(frozen=True)
class Reordering:
    """Node order grouping communities, with per-block edge densities.

    For bipartite graphs ``permutation`` covers the row nodes and
    ``col_permutation`` the column nodes (both as global ids); otherwise
    ``col_permutation`` is None. ``coords`` lists the reordered positions of
    every nonzero of the adjacency matrix (both orientations when unipartite).
    """

    permutation: np.ndarray
    col_permutation: np.ndarray | None
    density: np.ndarray
    block_sizes: np.ndarray
    col_block_sizes: np.ndarray
    coords: np.ndarray

    def diagonal_density(self) -> float:
        d = np.diag(self.density)
        mask = (self.block_sizes > 0) & (self.col_block_sizes > 0)
        return float(np.mean(d[mask])) if mask.any() else 0.0

    def off_diagonal_density(self) -> float:
        k = len(self.density)
        mask = ~np.eye(k, dtype=bool)
        mask &= (self.block_sizes[:, None] > 0) & (self.col_block_sizes[None, :] > 0)
        return float(np.mean(self.density[mask])) if mask.any() else 0.0


def _order(nodes: np.ndarray, labels: np.ndarray, degree: np.ndarray) -> np.ndarray:
    # primary: community, then degree descending, then node id
    return nodes[np.lexsort((nodes, -degree[nodes], labels[nodes]))]


def reorder_adjacency(g: Graph, part, n_communities: int | None = None) -> Reordering:
    """Sort nodes by (community, degree descending) and summarise block densities."""
    part = np.asarray(part, dtype=np.int64)
    if len(part) != g.n_nodes:
        raise ValueError(f"partition covers {len(part)} of {g.n_nodes} nodes")
    k = int(max(part.max() + 1 if len(part) else 0, n_communities or 0))
    deg = g.degrees()
    i, j = g.edges[:, 0], g.edges[:, 1]

    if g.bipartite:
        rows = _order(np.arange(g.n_rows), part, deg)
        cols = _order(np.arange(g.n_rows, g.n_nodes), part, deg)
        row_pos = np.empty(g.n_nodes, dtype=np.int64)
        row_pos[rows] = np.arange(len(rows))
        row_pos[cols] = np.arange(len(cols))
        sizes_r = np.bincount(part[: g.n_rows], minlength=k)
        sizes_c = np.bincount(part[g.n_rows :], minlength=k)
        counts = np.zeros((k, k))
        np.add.at(counts, (part[i], part[j]), 1.0)
        possible = np.outer(sizes_r, sizes_c).astype(np.float64)
        coords = np.stack([row_pos[i], row_pos[j]], axis=1)
        perm, col_perm = rows, cols
    else:
        perm = _order(np.arange(g.n_nodes), part, deg)
        pos = np.empty(g.n_nodes, dtype=np.int64)
        pos[perm] = np.arange(g.n_nodes)
        sizes_r = sizes_c = np.bincount(part, minlength=k)
        counts = np.zeros((k, k))
        np.add.at(counts, (part[i], part[j]), 1.0)
        counts = counts + counts.T - np.diag(np.diag(counts))
        possible = np.outer(sizes_r, sizes_r).astype(np.float64)
        np.fill_diagonal(possible, sizes_r * (sizes_r - 1) / 2.0)
        both = np.concatenate([np.stack([pos[i], pos[j]], 1), np.stack([pos[j], pos[i]], 1)])
        coords = both[np.lexsort((both[:, 1], both[:, 0]))]
        col_perm = None

    with np.errstate(divide="ignore", invalid="ignore"):
        density = np.where(possible > 0, counts / possible, 0.0)
    if g.bipartite:
        coords = coords[np.lexsort((coords[:, 1], coords[:, 0]))]
    return Reordering(perm, col_perm, density, sizes_r, sizes_c, coords)


def membership_alignment(W_a: np.ndarray, W_b: np.ndarray) -> tuple[float, np.ndarray]:
    """Best column matching between two membership matrices.

    Returns the mean Pearson correlation of matched columns and the column
    permutation of ``W_b`` that achieves it.
    """
    from scipy.optimize import linear_sum_assignment

    k = W_a.shape[1]
    corr = np.corrcoef(W_a.T, W_b.T)[:k, k:]
    corr = np.nan_to_num(corr, nan=0.0)
    r, c = linear_sum_assignment(-corr)
    return float(np.mean(corr[r, c])), c
