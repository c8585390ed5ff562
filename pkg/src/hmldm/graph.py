"""Sparse undirected graphs, edge-list I/O and link-prediction splits.

Graphs are immutable. Node ids are dense 0-based integers and the edge list is
kept as a sorted ``(E, 2)`` integer array with ``i < j`` on every row, so two
graphs holding the same edge set compare equal.

Bipartite graphs use global ids as well: row nodes are ``0 .. n_rows - 1`` and
column nodes ``n_rows .. n_rows + n_cols - 1``.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

# below this size negative pairs are drawn from an explicit enumeration
EXHAUSTIVE_NEGATIVE_LIMIT = 1000


class EdgeListParseError(ValueError):
    """Malformed edge-list line."""

    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {reason}: {line.rstrip()!r}")


class GraphValidationError(ValueError):
    """Edge list that violates a graph invariant (self-loop, bad partition)."""


class Graph:
    """Immutable undirected simple graph, optionally bipartite.

    Args:
        n_nodes: number of nodes.
        edges: iterable of node pairs; order and orientation are irrelevant,
            duplicates collapse.
        n_rows: if given, the graph is bipartite with ``n_rows`` row nodes and
            ``n_nodes - n_rows`` column nodes.
        original_ids: optional map from dense id to the id used in the source
            file, kept when the input ids had to be relabeled.
    """

    __slots__ = ("n_nodes", "edges", "n_rows", "original_ids", "_adj", "_degree")

    def __init__(
        self,
        n_nodes: int,
        edges: Iterable[tuple[int, int]] | np.ndarray = (),
        n_rows: int | None = None,
        original_ids: np.ndarray | None = None,
    ):
        n_nodes = int(n_nodes)
        if n_nodes < 0:
            raise GraphValidationError("n_nodes must be non-negative")
        arr = np.asarray(edges if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            arr = np.empty((0, 2), dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
            raise GraphValidationError(f"node id outside [0, {n_nodes})")
        loops = arr[:, 0] == arr[:, 1]
        if loops.any():
            i = int(arr[loops][0, 0])
            raise GraphValidationError(f"self-loop on node {i}")
        arr = np.sort(arr, axis=1)
        arr = np.unique(arr, axis=0)
        if n_rows is not None:
            n_rows = int(n_rows)
            if not 0 <= n_rows <= n_nodes:
                raise GraphValidationError("n_rows must lie in [0, n_nodes]")
            bad = (arr[:, 0] >= n_rows) | (arr[:, 1] < n_rows)
            if bad.any():
                i, j = arr[bad][0]
                raise GraphValidationError(
                    f"edge ({i}, {j}) does not join a row node (< {n_rows}) to a column node"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "n_nodes", n_nodes)
        object.__setattr__(self, "edges", arr)
        object.__setattr__(self, "n_rows", n_rows)
        object.__setattr__(self, "original_ids", original_ids)
        object.__setattr__(self, "_adj", None)
        object.__setattr__(self, "_degree", None)

    def __setattr__(self, name, value):
        raise AttributeError("Graph is immutable")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.n_rows == other.n_rows
            and np.array_equal(self.edges, other.edges)
        )

    def __hash__(self):
        return hash((self.n_nodes, self.n_rows, self.edges.tobytes()))

    def __repr__(self):
        kind = "unipartite" if self.n_rows is None else f"bipartite({self.n_rows}x{self.n_cols})"
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges}, {kind})"

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def bipartite(self) -> bool:
        return self.n_rows is not None

    @property
    def n_cols(self) -> int | None:
        return None if self.n_rows is None else self.n_nodes - self.n_rows

    @property
    def n_pairs(self) -> int:
        """Number of node pairs the likelihood runs over."""
        if self.bipartite:
            return self.n_rows * self.n_cols
        return self.n_nodes * (self.n_nodes - 1) // 2

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric binary adjacency matrix (cached)."""
        if self._adj is None:
            i, j = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * len(i), dtype=np.float64)
            adj = sparse.csr_matrix(
                (data, (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(self.n_nodes, self.n_nodes),
            )
            object.__setattr__(self, "_adj", adj)
        return self._adj

    def degrees(self) -> np.ndarray:
        if self._degree is None:
            deg = np.bincount(self.edges.ravel(), minlength=self.n_nodes)
            deg.setflags(write=False)
            object.__setattr__(self, "_degree", deg)
        return self._degree

    def edge_set(self) -> set[tuple[int, int]]:
        return set(map(tuple, self.edges.tolist()))

    def with_edges(self, edges) -> "Graph":
        """Same node set and mode, different edges."""
        return Graph(self.n_nodes, edges, n_rows=self.n_rows, original_ids=self.original_ids)


@dataclass(frozen=True)
class LabeledGraph:
    graph: Graph
    labels: np.ndarray

    def __post_init__(self):
        if len(self.labels) != self.graph.n_nodes:
            raise GraphValidationError(
                f"{len(self.labels)} labels for {self.graph.n_nodes} nodes"
            )

    @property
    def n_communities(self) -> int:
        return int(np.max(self.labels)) + 1 if len(self.labels) else 0


@dataclass(frozen=True)
class TrainTestSplit:
    """Residual training graph plus held-out positive and negative pairs.

    ``short`` is set when fewer than the requested number of edges could be
    removed without disconnecting the residual graph.
    """

    train: Graph
    test_positives: np.ndarray
    test_negatives: np.ndarray
    seed: int
    requested: int = 0
    short: bool = False
    warnings: tuple[str, ...] = field(default=())


# --------------------------------------------------------------------------
# I/O


def load_edge_list(
    source: TextIO | str,
    mode: str | None = None,
    n_nodes: int | None = None,
    drop_self_loops: bool = False,
) -> Graph:
    """Parse a whitespace-separated edge list.

    ``#`` lines are comments. A ``%bipartite <n_rows> <n_cols>`` header makes
    the graph bipartite and ``%nodes <n>`` fixes the node count (needed when
    trailing nodes are isolated). Without either header, sparse ids are
    relabeled densely in increasing order of their original value.

    Args:
        source: open text stream or a string holding the file contents.
        mode: ``"unipartite"``, ``"bipartite"`` or None to follow the header.
        n_nodes: node count override for unipartite input.
        drop_self_loops: skip ``i i`` lines instead of rejecting them.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    if mode not in (None, "unipartite", "bipartite"):
        raise ValueError(f"unknown mode {mode!r}")

    pairs: list[tuple[int, int]] = []
    n_rows = n_cols = None
    header_nodes = None
    for line_no, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("%"):
            tokens = stripped[1:].split()
            try:
                if tokens and tokens[0] == "bipartite" and len(tokens) == 3:
                    n_rows, n_cols = int(tokens[1]), int(tokens[2])
                    continue
                if tokens and tokens[0] == "nodes" and len(tokens) == 2:
                    header_nodes = int(tokens[1])
                    continue
            except ValueError:
                pass
            raise EdgeListParseError(line_no, line, "unrecognised header")
        tokens = stripped.split()
        if len(tokens) < 2:
            raise EdgeListParseError(line_no, line, "expected two node ids")
        try:
            i, j = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise EdgeListParseError(line_no, line, "non-integer node id") from None
        if i < 0 or j < 0:
            raise EdgeListParseError(line_no, line, "negative node id")
        if i == j:
            if drop_self_loops:
                continue
            raise GraphValidationError(f"line {line_no}: self-loop on node {i}")
        pairs.append((i, j))

    if mode == "bipartite" and n_rows is None:
        raise GraphValidationError("bipartite mode needs a '%bipartite <n_rows> <n_cols>' header")
    if mode == "unipartite" and n_rows is not None:
        raise GraphValidationError("unipartite mode given but file carries a bipartite header")

    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if n_rows is not None:
        return Graph(n_rows + n_cols, arr, n_rows=n_rows)

    n = n_nodes if n_nodes is not None else header_nodes
    if n is not None:
        return Graph(n, arr)
    ids = np.unique(arr)
    if len(ids) and ids[-1] + 1 != len(ids):
        return Graph(len(ids), np.searchsorted(ids, arr), original_ids=ids)
    return Graph(len(ids), arr)


def read_edge_list(path, mode: str | None = None, n_nodes: int | None = None, drop_self_loops: bool = False) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return load_edge_list(fh, mode=mode, n_nodes=n_nodes, drop_self_loops=drop_self_loops)


def serialize_edge_list(g: Graph) -> str:
    """Canonical text form: optional header, then sorted ``i j`` lines."""
    lines = []
    if g.bipartite:
        lines.append(f"%bipartite {g.n_rows} {g.n_cols}")
    elif len(np.unique(g.edges)) != g.n_nodes:
        # isolated nodes would be lost (or ids relabeled) without the header
        lines.append(f"%nodes {g.n_nodes}")
    lines.extend(f"{i} {j}" for i, j in g.edges.tolist())
    return "".join(line + "\n" for line in lines)


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_edge_list(g))


# --------------------------------------------------------------------------
# connectivity


def _components(g: Graph, edges: np.ndarray | None = None) -> np.ndarray:
    if edges is None:
        edges = g.edges
    adj = sparse.coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(g.n_nodes, g.n_nodes)
    )
    _, comp = csgraph.connected_components(adj, directed=False)
    return comp


def is_connected(g: Graph) -> bool:
    """True iff every node with at least one edge sits in a single component."""
    if g.n_edges == 0:
        return True
    comp = _components(g)
    active = g.degrees() > 0
    return len(np.unique(comp[active])) == 1


def random_spanning_forest(g: Graph, rng: np.random.Generator) -> np.ndarray:
    """Uniform random spanning tree of every component (Wilson's algorithm).

    Returns indices into ``g.edges`` of the forest edges.
    """
    adj = g.adjacency()
    indptr, indices = adj.indptr, adj.indices
    n = g.n_nodes
    in_tree = np.zeros(n, dtype=bool)
    nxt = np.full(n, -1, dtype=np.int64)
    comp = _components(g)
    degree = np.diff(indptr)

    # one root per component, chosen at random among its nodes
    order = rng.permutation(n)
    seen_comp = set()
    for v in order:
        c = comp[v]
        if c not in seen_comp:
            seen_comp.add(c)
            in_tree[v] = True

    for start in order:
        u = start
        while not in_tree[u]:
            k = indptr[u] + int(rng.integers(degree[u]))
            nxt[u] = indices[k]
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]

    child = np.flatnonzero(nxt >= 0)
    tree = np.sort(np.stack([child, nxt[child]], axis=1), axis=1)
    # edges are unique and sorted, so a row-wise lookup is a searchsorted on a key
    key = g.edges[:, 0] * n + g.edges[:, 1]
    return np.searchsorted(key, tree[:, 0] * n + tree[:, 1])


def split_for_link_prediction(g: Graph, removal_fraction: float = 0.5, seed: int = 0) -> TrainTestSplit:
    """Hold out edges while keeping the residual graph connected.

    A uniform random spanning forest is protected; ``floor(fraction * |E|)``
    of the remaining edges are removed uniformly at random (or all of them
    when there are not enough, with ``short`` set). As many non-edges of the
    original graph are sampled as negatives.
    """
    if not 0.0 < removal_fraction < 1.0:
        raise ValueError("removal_fraction must lie strictly between 0 and 1")
    notes = []
    if not is_connected(g):
        notes.append("input graph is disconnected; components are preserved individually")
        warnings.warn(notes[-1], stacklevel=2)
    split_seq, neg_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(split_seq)

    protected = np.zeros(g.n_edges, dtype=bool)
    protected[random_spanning_forest(g, rng)] = True
    removable = np.flatnonzero(~protected)
    requested = int(np.floor(removal_fraction * g.n_edges))
    k = min(requested, len(removable))
    short = k < requested
    if short:
        notes.append(f"only {k} of {requested} requested edges removable without disconnecting")
        warnings.warn(notes[-1], stacklevel=2)
    chosen = np.sort(rng.choice(removable, size=k, replace=False)) if k else np.empty(0, dtype=np.int64)
    keep = np.ones(g.n_edges, dtype=bool)
    keep[chosen] = False

    train = g.with_edges(g.edges[keep])
    positives = g.edges[chosen]
    n_neg = min(k, g.n_pairs - g.n_edges)
    if n_neg < k:
        notes.append(f"only {n_neg} non-edges exist for {k} held-out positives")
        warnings.warn(notes[-1], stacklevel=2)
    negatives = sample_negative_pairs(g, n_neg, seed=neg_seq)
    return TrainTestSplit(
        train=train,
        test_positives=positives,
        test_negatives=negatives,
        seed=seed,
        requested=requested,
        short=short,
        warnings=tuple(notes),
    )


# --------------------------------------------------------------------------
# negative sampling


def _all_candidate_pairs(g: Graph) -> np.ndarray:
    if g.bipartite:
        r, c = np.meshgrid(np.arange(g.n_rows), np.arange(g.n_rows, g.n_nodes), indexing="ij")
        return np.stack([r.ravel(), c.ravel()], axis=1)
    i, j = np.triu_indices(g.n_nodes, k=1)
    return np.stack([i, j], axis=1)


def sample_negative_pairs(
    g: Graph,
    count: int,
    seed=0,
    exclude: Iterable[tuple[int, int]] = (),
) -> np.ndarray:
    """Sample ``count`` distinct non-edges uniformly without replacement.

    Pairs in ``exclude`` (either orientation) are never returned. Bipartite
    graphs only yield row-column pairs. Output rows are sorted ``(i, j)`` with
    ``i < j``.
    """
    count = int(count)
    if count < 0:
        raise ValueError("count must be non-negative")
    excluded = {(min(a, b), max(a, b)) for a, b in exclude}
    edges = g.edge_set()
    extra = len(excluded - edges)
    if g.bipartite:
        extra = sum(1 for a, b in excluded - edges if a < g.n_rows <= b)
    available = g.n_pairs - g.n_edges - extra
    if count > available:
        raise ValueError(f"requested {count} negative pairs but only {available} non-edges are available")
    rng = np.random.default_rng(seed)
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)

    if g.n_nodes <= EXHAUSTIVE_NEGATIVE_LIMIT:
        cand = _all_candidate_pairs(g)
        forbidden = edges | excluded
        mask = np.fromiter(
            ((a, b) not in forbidden for a, b in cand.tolist()), dtype=bool, count=len(cand)
        )
        cand = cand[mask]
        pick = rng.choice(len(cand), size=count, replace=False)
        return cand[np.sort(pick)]

    seen: set[tuple[int, int]] = set()
    forbidden = edges | excluded
    out = []
    while len(out) < count:
        batch = max(2 * (count - len(out)), 64)
        if g.bipartite:
            a = rng.integers(0, g.n_rows, size=batch)
            b = rng.integers(g.n_rows, g.n_nodes, size=batch)
        else:
            a = rng.integers(0, g.n_nodes, size=batch)
            b = rng.integers(0, g.n_nodes, size=batch)
        for x, y in zip(a.tolist(), b.tolist()):
            if x == y:
                continue
            p = (x, y) if x < y else (y, x)
            if p in forbidden or p in seen:
                continue
            seen.add(p)
            out.append(p)
            if len(out) == count:
                break
    arr = np.array(out, dtype=np.int64)
    return arr[np.lexsort((arr[:, 1], arr[:, 0]))]


# --------------------------------------------------------------------------
# synthetic graphs


def block_sizes(n: int, k: int) -> np.ndarray:
    """Sizes of ``k`` contiguous blocks over ``n`` nodes, larger blocks first."""
    base, rem = divmod(n, k)
    return np.array([base + 1] * rem + [base] * (k - rem), dtype=np.int64)


def generate_planted_partition(
    n: int, k: int, p_in: float, p_out: float, seed: int = 0
) -> LabeledGraph:
    """Planted-partition random graph with ``k`` contiguous blocks.

    Within-block pairs are edges with probability ``p_in``, cross-block pairs
    with ``p_out``, all independently.
    """
    if n < 1 or k < 1 or k > n:
        raise GraphValidationError("need n >= 1 and 1 <= k <= n")
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0):
        raise GraphValidationError("probabilities must lie in [0, 1]")
    # p_in == p_out == 1 (complete graph) is the one tolerated non-assortative case
    if p_out >= p_in and not (p_in == p_out == 1.0):
        raise GraphValidationError("planted partition needs p_out < p_in")
    labels = np.repeat(np.arange(k), block_sizes(n, k))
    rng = np.random.default_rng(seed)
    i, j = np.triu_indices(n, k=1)
    prob = np.where(labels[i] == labels[j], p_in, p_out)
    keep = rng.random(len(i)) < prob
    g = Graph(n, np.stack([i[keep], j[keep]], axis=1))
    return LabeledGraph(g, labels)


def generate_bipartite_blocks(
    n_rows: int, n_cols: int, k: int, p_in: float, p_out: float, seed: int = 0
) -> tuple[Graph, np.ndarray, np.ndarray]:
    """Bipartite block graph: row block ``a`` links to column block ``a`` with ``p_in``.

    Returns the graph together with the row and column block labels.
    """
    if not 0.0 <= p_out < p_in <= 1.0:
        raise GraphValidationError("bipartite blocks need 0 <= p_out < p_in <= 1")
    row_labels = np.repeat(np.arange(k), block_sizes(n_rows, k))
    col_labels = np.repeat(np.arange(k), block_sizes(n_cols, k))
    rng = np.random.default_rng(seed)
    prob = np.where(row_labels[:, None] == col_labels[None, :], p_in, p_out)
    r, c = np.nonzero(rng.random(prob.shape) < prob)
    g = Graph(n_rows + n_cols, np.stack([r, c + n_rows], axis=1), n_rows=n_rows)
    return g, row_labels, col_labels
