"""Hybrid-membership latent distance model.

Each node carries a point ``w_i`` on the unit simplex with ``D + 1`` corners
and a random effect ``gamma_i``. The Poisson log-rate between two nodes is

    log lambda_ij = gamma_i + gamma_j - delta**p * ||w_i - w_j||**p

and the log-likelihood of a binary network is

    sum_{edges} log lambda_ij - sum_{pairs} lambda_ij.

``w_i`` is the row-softmax of a free logit vector, so optimisation runs
unconstrained. Pair sums are evaluated block by block without ever holding an
``N x N`` matrix.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .graph import Graph

CHECKPOINT_FORMAT = "hmldm-checkpoint"
CHECKPOINT_VERSION = 1

# soft cap on block rows x right-set size x corners per pair block
_BLOCK_ELEMENTS = 1 << 22
_MAX_BLOCK_ROWS = 128


@functools.lru_cache(maxsize=8)
def _lower_mask(size: int) -> np.ndarray:
    """Boolean mask of the diagonal and below for a ``size`` square."""
    mask = np.tril(np.ones((size, size), dtype=bool))
    mask.setflags(write=False)
    return mask


class NumericalError(FloatingPointError):
    """A log-rate or rate became non-finite."""

    def __init__(self, pair: tuple[int, int], value: float):
        self.pair = pair
        self.value = value
        super().__init__(f"non-finite value {value} at node pair {pair}")


@dataclass(frozen=True)
class ModelConfig:
    """Model hyperparameters.

    ``dimension`` is the reported latent dimension D; the simplex has
    ``D + 1`` corners, one per latent community.
    """

    dimension: int = 8
    p: int = 1
    delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("dimension must be >= 1")
        if self.p not in (1, 2):
            raise ValueError("norm power p must be 1 or 2")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError("delta must be a positive finite number")

    @property
    def n_communities(self) -> int:
        return self.dimension + 1

    @property
    def scale(self) -> float:
        """Multiplier on the p-th power distance, ``delta**p``."""
        return float(self.delta) ** self.p

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


@dataclass
class ModelState:
    """Trainable parameters.

    In bipartite mode the first ``n_rows`` rows of ``logits``/``gamma`` belong
    to row nodes and the rest to column nodes; the two sets are separate
    latent variables that only ever interact across the partition.
    """

    logits: np.ndarray
    gamma: np.ndarray
    config: ModelConfig
    n_rows: int | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if self.logits.ndim != 2 or self.logits.shape[1] != self.config.n_communities:
            raise ValueError(
                f"logits must be N x {self.config.n_communities}, got {self.logits.shape}"
            )
        if self.gamma.shape != (self.logits.shape[0],):
            raise ValueError("gamma must hold one value per node")

    @property
    def n_nodes(self) -> int:
        return self.logits.shape[0]

    @property
    def bipartite(self) -> bool:
        return self.n_rows is not None

    @property
    def row_logits(self) -> np.ndarray:
        return self.logits[: self.n_rows] if self.bipartite else self.logits

    @property
    def col_logits(self) -> np.ndarray:
        return self.logits[self.n_rows :] if self.bipartite else self.logits

    @property
    def row_gamma(self) -> np.ndarray:
        return self.gamma[: self.n_rows] if self.bipartite else self.gamma

    @property
    def col_gamma(self) -> np.ndarray:
        return self.gamma[self.n_rows :] if self.bipartite else self.gamma

    def copy(self) -> "ModelState":
        return ModelState(
            self.logits.copy(), self.gamma.copy(), self.config, self.n_rows, dict(self.metadata)
        )

    def with_params(self, logits: np.ndarray, gamma: np.ndarray) -> "ModelState":
        return ModelState(logits, gamma, self.config, self.n_rows, dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (
            self.config == other.config
            and self.n_rows == other.n_rows
            and self.logits.shape == other.logits.shape
            and self.logits.tobytes() == other.logits.tobytes()
            and self.gamma.tobytes() == other.gamma.tobytes()
        )


@dataclass
class Gradient:
    logits: np.ndarray
    gamma: np.ndarray


def init_state(
    config: ModelConfig,
    n_nodes: int,
    seed: int | None = None,
    graph: Graph | None = None,
    n_rows: int | None = None,
) -> ModelState:
    """Random initial state.

    Logits are uniform on (-1, 1). With a graph, random effects start at
    ``log(degree + 1) - log(mean degree)``, otherwise at zero.
    """
    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if graph is not None:
        if graph.n_nodes != n_nodes:
            raise ValueError("graph size does not match n_nodes")
        n_rows = graph.n_rows
    rng = np.random.default_rng(config.seed if seed is None else seed)
    logits = rng.uniform(-1.0, 1.0, size=(n_nodes, config.n_communities))
    gamma = np.zeros(n_nodes)
    if graph is not None:
        deg = graph.degrees().astype(np.float64)
        mean = deg.mean()
        if mean > 0:
            gamma = np.log(deg + 1.0) - np.log(mean)
    return ModelState(logits, gamma, config, n_rows)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def embeddings(state: ModelState) -> np.ndarray:
    """Simplex coordinates ``W`` (row-softmax of the logits)."""
    return softmax(state.logits)


def _check_pair(state: ModelState, i: int, j: int) -> None:
    n = state.n_nodes
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node pair ({i}, {j}) outside [0, {n})")
    if i == j:
        raise ValueError(f"log-rate undefined for a node with itself ({i})")
    if state.bipartite and ((i < state.n_rows) == (j < state.n_rows)):
        raise ValueError(f"pair ({i}, {j}) lies on one side of the bipartition")


def log_rate(state: ModelState, i: int, j: int) -> float:
    """``gamma_i + gamma_j - delta**p * ||w_i - w_j||**p`` for one pair."""
    _check_pair(state, i, j)
    w = softmax(state.logits[[i, j]])
    diff = w[0] - w[1]
    # squared differences sorted so (i, j) and (j, i) sum identically
    sq = float(np.sum(np.sort(diff * diff)))
    dist_p = sq if state.config.p == 2 else math.sqrt(sq)
    return float(state.gamma[i] + state.gamma[j]) - state.config.scale * dist_p


def log_rates(state: ModelState, pairs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`log_rate` over an ``(M, 2)`` array of pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.empty(0)
    i, j = pairs[:, 0], pairs[:, 1]
    n = state.n_nodes
    bad = (i < 0) | (j < 0) | (i >= n) | (j >= n) | (i == j)
    if state.bipartite:
        bad |= (i < state.n_rows) == (j < state.n_rows)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(f"invalid pair at index {k}: ({i[k]}, {j[k]})")
    W = embeddings(state)
    diff = W[i] - W[j]
    sq = np.sum(np.sort(diff * diff, axis=1), axis=1)
    dist_p = sq if state.config.p == 2 else np.sqrt(sq)
    return (state.gamma[i] + state.gamma[j]) - state.config.scale * dist_p


def eigenmodel_log_rate(state: ModelState, i: int, j: int) -> float:
    """Log-rate in positive-eigenmodel form (p = 2 only).

    ``g_i + g_j + 2 delta**2 <w_i, w_j>`` with ``g_i = gamma_i - delta**2 ||w_i||**2``.
    """
    if state.config.p != 2:
        raise ValueError("eigenmodel form exists only for p = 2")
    _check_pair(state, i, j)
    w = softmax(state.logits[[i, j]])
    d2 = state.config.delta**2
    gi = state.gamma[i] - d2 * float(w[0] @ w[0])
    gj = state.gamma[j] - d2 * float(w[1] @ w[1])
    return float(gi + gj + 2.0 * d2 * float(w[0] @ w[1]))


# --------------------------------------------------------------------------
# likelihood and gradient


def canonical_column_order(logits: np.ndarray) -> np.ndarray:
    """Column permutation sorting the logit columns lexicographically.

    Evaluating on canonically ordered columns makes every reduction over the
    community axis independent of how the communities happen to be labeled.
    """
    return np.lexsort(logits[::-1])


def _check_sizes(state: ModelState, g: Graph) -> None:
    if state.n_nodes != g.n_nodes:
        raise ValueError(f"state has {state.n_nodes} nodes, graph has {g.n_nodes}")
    if state.n_rows != g.n_rows:
        raise ValueError("state and graph disagree on the bipartition")


def _raise_nonfinite(values: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(values))
    a, b = bad[0]
    raise NumericalError((int(rows[a]), int(cols[b])), float(values[a, b]))


def _sq_dist_block(Wa: np.ndarray, Wb: np.ndarray, W2a, W2b, fast: bool) -> np.ndarray:
    if fast:
        sq = W2a[:, None] + W2b[None, :] - 2.0 * (Wa @ Wb.T)
        np.maximum(sq, 0.0, out=sq)
        return sq
    # accumulate column by column in a fixed order
    sq = np.zeros((len(Wa), len(Wb)))
    for k in range(Wa.shape[1]):
        d = np.subtract.outer(Wa[:, k], Wb[:, k])
        d *= d
        sq += d
    return sq


def _evaluate(state: ModelState, g: Graph, want_grad: bool, deterministic: bool = True):
    """Log-likelihood and, optionally, its gradient w.r.t. (W, gamma)."""
    _check_sizes(state, g)
    cfg = state.config
    order = canonical_column_order(state.logits)
    W = softmax(state.logits[:, order])
    gamma = state.gamma
    scale = cfg.scale
    p = cfg.p
    n = state.n_nodes
    fast = (not deterministic) and p == 2
    W2 = np.einsum("ij,ij->i", W, W) if fast else None

    if state.bipartite:
        left = np.arange(state.n_rows)
        right = np.arange(state.n_rows, n)
    else:
        left = right = np.arange(n)

    if not (np.isfinite(W).all() and np.isfinite(gamma).all()):
        bad = int(np.flatnonzero(~(np.isfinite(W).all(axis=1) & np.isfinite(gamma)))[0])
        raise NumericalError((bad, bad), float("nan"))

    gW = np.zeros_like(W) if want_grad else None
    gG = np.zeros(n) if want_grad else None
    block = min(_MAX_BLOCK_ROWS, max(1, _BLOCK_ELEMENTS // max(1, len(right) * W.shape[1])))
    partials = []
    for start in range(0, len(left), block):
        rows = left[start : start + block]
        # unipartite: only columns from the block's first row on, i.e. j > i after masking
        cols = right if state.bipartite else right[start:]
        Wa, Wb = W[rows], W[cols]
        sq = _sq_dist_block(Wa, Wb, W2[rows] if fast else None, W2[cols] if fast else None, fast)
        dist = sq if p == 2 else np.sqrt(sq, out=sq)
        lam = np.add.outer(gamma[rows], gamma[cols])
        lam -= scale * dist
        with np.errstate(over="ignore"):
            # overflow surfaces below as a NumericalError naming the pair
            np.exp(lam, out=lam)
        if not state.bipartite:
            tri = _lower_mask(len(rows))
            lam[:, : len(rows)][tri] = 0.0
        total = np.sum(lam)
        if not math.isfinite(total):
            _raise_nonfinite(lam, rows, cols)
        partials.append(total)
        if not want_grad:
            continue
        # dLL/dlog-rate is -lambda for every pair (edges add +1 below)
        gG[rows] -= lam.sum(axis=1)
        gG[cols] -= lam.sum(axis=0)
        if p == 2:
            coef = lam * (2.0 * scale)
        else:
            if not state.bipartite:
                dist[:, : len(rows)][tri] = 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.divide(lam, dist, out=dist)
            if not math.isfinite(coef.sum()):
                # coincident points: zero subgradient for the distance term
                coef[~np.isfinite(coef)] = 0.0
            coef *= scale
        gW[rows] += coef.sum(axis=1)[:, None] * Wa - coef @ Wb
        gW[cols] += coef.sum(axis=0)[:, None] * Wb - coef.T @ Wa

    penalty = float(np.sum(np.asarray(partials))) if partials else 0.0

    # edge term, exact
    ei, ej = g.edges[:, 0], g.edges[:, 1]
    ediff = W[ei] - W[ej]
    esq = np.sum(ediff * ediff, axis=1)
    edist = esq if p == 2 else np.sqrt(esq)
    elr = gamma[ei] + gamma[ej] - scale * edist
    if not np.isfinite(elr).all():
        k = int(np.flatnonzero(~np.isfinite(elr))[0])
        raise NumericalError((int(ei[k]), int(ej[k])), float(elr[k]))
    ll = float(np.sum(elr)) - penalty
    if not math.isfinite(ll):
        raise NumericalError((-1, -1), ll)
    if not want_grad:
        return ll, None

    gG += np.bincount(ei, minlength=n) + np.bincount(ej, minlength=n)
    # +1 on dLL/dlog-rate for each edge; coefficient times (w_i - w_j)
    ecoef = _distance_coef(np.ones_like(edist), edist, p, scale, sign=-1.0)
    contrib = ecoef[:, None] * ediff
    for k in range(W.shape[1]):
        gW[:, k] += np.bincount(ei, contrib[:, k], minlength=n)
        gW[:, k] -= np.bincount(ej, contrib[:, k], minlength=n)

    # chain rule through the softmax, then undo the canonical column order
    g_logits = W * (gW - np.sum(gW * W, axis=1, keepdims=True))
    out = np.empty_like(g_logits)
    out[:, order] = g_logits
    return ll, Gradient(out, gG)


def _distance_coef(weight, dist, p, scale, sign):
    """Coefficient c_ij with dLL/dw_i = sum_j c_ij (w_i - w_j).

    ``weight`` is -dLL/dlog-rate for the dense part (``lambda``) and the edge
    count for the sparse part; ``sign`` selects which of the two it is.
    """
    if p == 2:
        return sign * 2.0 * scale * weight
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(dist > 0, weight / dist, 0.0)
    return sign * scale * c


def log_likelihood(state: ModelState, g: Graph, deterministic: bool = True) -> float:
    """Exact Poisson log-likelihood over all node pairs.

    The ``log(y!)`` term vanishes for binary networks and is dropped. Raises
    :class:`NumericalError` naming a pair whose rate is non-finite.
    """
    return _evaluate(state, g, want_grad=False, deterministic=deterministic)[0]


def log_likelihood_and_gradient(state: ModelState, g: Graph, deterministic: bool = True):
    return _evaluate(state, g, want_grad=True, deterministic=deterministic)


def gradient(state: ModelState, g: Graph, deterministic: bool = True) -> Gradient:
    """Gradient of :func:`log_likelihood` w.r.t. the logits and random effects.

    For p = 1 the distance term contributes a zero subgradient for pairs at
    exactly the same simplex point.
    """
    return _evaluate(state, g, want_grad=True, deterministic=deterministic)[1]


def _pairs_from_linear(idx: np.ndarray, g: Graph) -> tuple[np.ndarray, np.ndarray]:
    if g.bipartite:
        return idx // g.n_cols, g.n_rows + idx % g.n_cols
    n = g.n_nodes
    # row i owns linear indices [start_i, start_i + n - 1 - i)
    starts = np.arange(n) * (2 * n - np.arange(n) - 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return i, j


def log_likelihood_sampled(state: ModelState, g: Graph, sample_pairs: int, seed=0) -> float:
    """Unbiased estimate of the log-likelihood for large graphs.

    The edge term is exact; the rate sum is estimated from ``sample_pairs``
    pairs drawn uniformly without replacement and scaled by
    ``n_pairs / sample_pairs``. Sampling every pair reproduces the exact value.
    """
    _check_sizes(state, g)
    if sample_pairs < 1:
        raise ValueError("sample_pairs must be >= 1")
    total = g.n_pairs
    m = min(int(sample_pairs), total)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=m, replace=False))
    i, j = _pairs_from_linear(idx, g)
    lam = np.exp(log_rates(state, np.stack([i, j], axis=1)))
    edge_term = float(np.sum(log_rates(state, g.edges))) if g.n_edges else 0.0
    return edge_term - float(np.sum(lam)) * (total / m)


# --------------------------------------------------------------------------
# checkpoints


def state_to_dict(state: ModelState) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "schema_version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "n_nodes": state.n_nodes,
        "n_rows": state.n_rows,
        "logits": state.logits.tolist(),
        "gamma": state.gamma.tolist(),
        "metadata": state.metadata,
    }


def state_from_dict(data: dict) -> ModelState:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an hmldm checkpoint")
    if data.get("schema_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('schema_version')}")
    config = ModelConfig(**data["config"])
    logits = np.array(data["logits"], dtype=np.float64).reshape(data["n_nodes"], config.n_communities)
    return ModelState(
        logits,
        np.array(data["gamma"], dtype=np.float64),
        config,
        data["n_rows"],
        dict(data.get("metadata") or {}),
    )


def save_checkpoint(state: ModelState, path) -> None:
    """Write a JSON checkpoint; floats are stored as shortest round-trip reprs."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(state), fh, allow_nan=False)
        fh.write("\n")


def load_checkpoint(path) -> ModelState:
    with open(path, encoding="utf-8") as fh:
        return state_from_dict(json.load(fh))
