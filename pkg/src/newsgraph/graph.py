"""Heterogeneous user-article community graph and its adjacency views.

Node ids are dense integers: users occupy [0, n_users) and articles
[n_users, n_users + n_articles). Edges are undirected, stored once, and
carry one of two relations: a user sharing an article, or a user
following another user. Test-split articles are never present; the graph
only ever holds train and validation articles.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ShapeError

USER_ARTICLE = 0
USER_USER = 1
RELATION_NAMES = {USER_ARTICLE: "user-article", USER_USER: "user-user"}
RELATION_CODES = {v: k for k, v in RELATION_NAMES.items()}


def _relation_code(relation) -> int:
    if relation in RELATION_NAMES:
        return int(relation)
    if relation in RELATION_CODES:
        return RELATION_CODES[relation]
    raise ValueError(f"unknown relation {relation!r}")


class CommunityGraph:
    """Immutable heterogeneous graph with per-node features.

    ``labels`` and ``split`` are aligned to article nodes (length
    n_articles): labels are 1.0 for fake / 0.0 for real, split entries are
    'train' or 'val'.
    """

    def __init__(self, n_users, n_articles, edges, features, labels, split):
        self.n_users = int(n_users)
        self.n_articles = int(n_articles)
        self.n_nodes = self.n_users + self.n_articles
        edges = list(edges)
        a = np.array([e[0] for e in edges], dtype=np.int64)
        b = np.array([e[1] for e in edges], dtype=np.int64)
        rel = np.array([_relation_code(e[2]) for e in edges], dtype=np.int64)
        self._validate_edges(a, b, rel)
        self.edge_a, self.edge_b, self.edge_rel = a, b, rel
        if features.shape[0] != self.n_nodes:
            raise ShapeError(
                f"features have {features.shape[0]} rows for {self.n_nodes} nodes"
            )
        self.features = features
        self.labels = np.asarray(labels, dtype=np.float64)
        self.split = np.asarray(split, dtype=object)
        if self.labels.shape != (self.n_articles,):
            raise ShapeError("labels must align with article nodes")
        if self.split.shape != (self.n_articles,):
            raise ShapeError("split must align with article nodes")
        if not set(np.unique(self.split)) <= {"train", "val"}:
            raise ConfigError("graph articles must carry split 'train' or 'val'")
        self._view = None

    def _validate_edges(self, a, b, rel):
        n_u, n = self.n_users, self.n_nodes
        if len(a) and (a.min() < 0 or max(a.max(), b.max() if len(b) else 0) >= n):
            raise ValueError("edge endpoint outside node range")
        if np.any(a == b):
            raise ValueError("self-loops are not allowed in raw storage")
        is_user_a, is_user_b = a < n_u, b < n_u
        ua = rel == USER_ARTICLE
        if np.any(is_user_a[ua] == is_user_b[ua]):
            raise ValueError("user-article edges must join one user and one article")
        uu = rel == USER_USER
        if np.any(~is_user_a[uu]) or np.any(~is_user_b[uu]):
            raise ValueError("user-user edges must join two users")
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = set(zip(lo.tolist(), hi.tolist(), rel.tolist()))
        if len(keys) != len(a):
            raise ValueError("duplicate edges in input")
        covered = np.zeros(self.n_articles, dtype=bool)
        art = np.where(is_user_a[ua], b[ua], a[ua]) - n_u
        covered[art] = True
        if not covered.all():
            missing = int(np.flatnonzero(~covered)[0])
            raise ValueError(
                f"article node {missing + n_u} has no user-article edge"
            )

    @property
    def n_edges(self) -> int:
        return len(self.edge_a)

    def article_node_ids(self) -> np.ndarray:
        return np.arange(self.n_users, self.n_nodes)

    def view(self) -> "GraphView":
        if self._view is None:
            self._view = GraphView(
                self.n_nodes, self.edge_a, self.edge_b, self.edge_rel
            )
        return self._view

    def with_features(self, features) -> "CommunityGraph":
        """Same topology and labels, different node features."""
        edges = zip(self.edge_a, self.edge_b, self.edge_rel)
        return CommunityGraph(
            self.n_users, self.n_articles, list(edges),
            features, self.labels, self.split,
        )


class NormalizedAdjacency:
    """CSR adjacency with a normalization tag and a relation filter."""

    def __init__(self, matrix: sp.csr_matrix, tag: str, relation: str = "all"):
        matrix = matrix.tocsr()
        matrix.sort_indices()
        self.matrix = matrix
        self.tag = tag
        self.relation = relation

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


class GraphView:
    """Per-(sub)graph adjacency caches consumed by the layers.

    Works identically for the full graph and for sampled batches; all
    node ids here are local to the view.
    """

    def __init__(self, n_nodes, edge_a, edge_b, edge_rel):
        self.n = int(n_nodes)
        self.edge_a = np.asarray(edge_a, dtype=np.int64)
        self.edge_b = np.asarray(edge_b, dtype=np.int64)
        self.edge_rel = np.asarray(edge_rel, dtype=np.int64)
        self._cache = {}

    def _sym_coo(self, relation=None, self_loops=False):
        mask = slice(None) if relation is None else self.edge_rel == relation
        a, b = self.edge_a[mask], self.edge_b[mask]
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        vals = np.ones(rows.shape[0], dtype=np.float64)
        if self_loops:
            diag = np.arange(self.n)
            rows = np.concatenate([rows, diag])
            cols = np.concatenate([cols, diag])
            vals = np.concatenate([vals, np.ones(self.n)])
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def symmetric(self, self_loops: bool = True) -> NormalizedAdjacency:
        """D^{-1/2} A D^{-1/2}; degrees counted after self-loop insertion."""
        key = ("sym", self_loops)
        if key not in self._cache:
            adj = self._sym_coo(self_loops=self_loops).tocsr()
            deg = np.asarray(adj.sum(axis=1)).ravel()
            if np.any(deg == 0):
                node = int(np.flatnonzero(deg == 0)[0])
                raise ZeroDivisionError(
                    f"node {node} is isolated; symmetric normalization "
                    "without self-loops divides by zero"
                )
            inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
            self._cache[key] = NormalizedAdjacency(
                inv_sqrt @ adj @ inv_sqrt, tag="symmetric"
            )
        return self._cache[key]

    def diagonal_enhanced(self) -> NormalizedAdjacency:
        """(D + I)^{-1} (A + I); every row sums to exactly 1."""
        if "diag" not in self._cache:
            adj = self._sym_coo(self_loops=True).tocsr()
            deg = np.asarray(adj.sum(axis=1)).ravel()
            inv = sp.diags(1.0 / deg)
            self._cache["diag"] = NormalizedAdjacency(
                inv @ adj, tag="diagonal-enhanced"
            )
        return self._cache["diag"]

    def relation(self, relation) -> NormalizedAdjacency:
        """Row-normalized adjacency restricted to one relation.

        Each present neighbor contributes 1/|neighbors under relation|;
        rows without such neighbors are zero.
        """
        code = _relation_code(relation)
        key = ("rel", code)
        if key not in self._cache:
            adj = self._sym_coo(relation=code).tocsr()
            deg = np.asarray(adj.sum(axis=1)).ravel()
            inv = sp.diags(np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0))
            self._cache[key] = NormalizedAdjacency(
                inv @ adj, tag="row-stochastic",
                relation=RELATION_NAMES[code],
            )
        return self._cache[key]

    def neighbor_mean(self) -> NormalizedAdjacency:
        """Row-normalized adjacency over all relations, no self-loops;
        isolated rows are zero (mean over the empty set is the zero
        vector)."""
        if "mean" not in self._cache:
            adj = self._sym_coo().tocsr()
            deg = np.asarray(adj.sum(axis=1)).ravel()
            inv = sp.diags(np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0))
            self._cache["mean"] = NormalizedAdjacency(inv @ adj, tag="row-stochastic")
        return self._cache["mean"]

    def attention_edges(self):
        """(dst, src) arrays over all relations, both directions, plus a
        self-loop at every node; neighborhoods for attention softmax."""
        if "attn" not in self._cache:
            diag = np.arange(self.n)
            dst = np.concatenate([self.edge_a, self.edge_b, diag])
            src = np.concatenate([self.edge_b, self.edge_a, diag])
            order = np.lexsort((src, dst))
            self._cache["attn"] = (dst[order], src[order])
        return self._cache["attn"]

    def relation_attention_edges(self, relation):
        """(dst, src) for one relation, both directions, no self-loops."""
        code = _relation_code(relation)
        key = ("rattn", code)
        if key not in self._cache:
            mask = self.edge_rel == code
            a, b = self.edge_a[mask], self.edge_b[mask]
            dst = np.concatenate([a, b])
            src = np.concatenate([b, a])
            order = np.lexsort((src, dst))
            self._cache[key] = (dst[order], src[order])
        return self._cache[key]


# ---------------------------------------------------------------------------
# spec'd module-level operations (delegate to the full-graph view)
# ---------------------------------------------------------------------------

def normalize_symmetric(graph: CommunityGraph, self_loops: bool) -> NormalizedAdjacency:
    return graph.view().symmetric(self_loops=self_loops)


def normalize_diagonal_enhanced(graph: CommunityGraph) -> NormalizedAdjacency:
    return graph.view().diagonal_enhanced()


def relation_view(graph: CommunityGraph, relation) -> NormalizedAdjacency:
    return graph.view().relation(relation)


# ---------------------------------------------------------------------------
# snapshot format
# ---------------------------------------------------------------------------
#
# A graph snapshot is a directory of three line-delimited UTF-8 files,
# tab-separated, in fixed column order:
#   nodes.tsv     id <TAB> kind <TAB> label <TAB> split
#                 (row order defines the node index; kind is user|article;
#                  label is fake|real|- ; split is train|val|-)
#   edges.tsv     a <TAB> b <TAB> relation      (node indices, relation name)
#   features.tsv  node <TAB> column <TAB> value (sparse row triplets)

import os


def save_graph(graph: CommunityGraph, directory, user_ids=None, article_ids=None):
    """Write the snapshot. Original string ids are preserved when given,
    otherwise synthetic u<i>/a<j> ids are emitted."""
    os.makedirs(directory, exist_ok=True)
    user_ids = user_ids or [f"u{i}" for i in range(graph.n_users)]
    article_ids = article_ids or [f"a{j}" for j in range(graph.n_articles)]
    with open(os.path.join(directory, "nodes.tsv"), "w", encoding="utf-8") as fh:
        for uid in user_ids:
            fh.write(f"{uid}\tuser\t-\t-\n")
        for j, aid in enumerate(article_ids):
            label = "fake" if graph.labels[j] == 1.0 else "real"
            fh.write(f"{aid}\tarticle\t{label}\t{graph.split[j]}\n")
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8") as fh:
        for a, b, r in zip(graph.edge_a, graph.edge_b, graph.edge_rel):
            fh.write(f"{a}\t{b}\t{RELATION_NAMES[int(r)]}\n")
    feats = sp.coo_matrix(graph.features)
    order = np.lexsort((feats.col, feats.row))
    with open(os.path.join(directory, "features.tsv"), "w", encoding="utf-8") as fh:
        for i in order:
            fh.write(f"{feats.row[i]}\t{feats.col[i]}\t{feats.data[i]:.17g}\n")


def load_graph(directory, n_feature_cols=None):
    """Read a snapshot back; returns (graph, user_ids, article_ids)."""
    nodes_path = os.path.join(directory, "nodes.tsv")
    if not os.path.exists(nodes_path):
        raise ConfigError(f"no snapshot at {directory}")
    user_ids, article_ids, labels, split = [], [], [], []
    with open(nodes_path, encoding="utf-8") as fh:
        for line in fh:
            nid, kind, label, spl = line.rstrip("\n").split("\t")
            if kind == "user":
                user_ids.append(nid)
            else:
                article_ids.append(nid)
                labels.append(1.0 if label == "fake" else 0.0)
                split.append(spl)
    edges = []
    with open(os.path.join(directory, "edges.tsv"), encoding="utf-8") as fh:
        for line in fh:
            a, b, rel = line.rstrip("\n").split("\t")
            edges.append((int(a), int(b), rel))
    rows, cols, vals = [], [], []
    with open(os.path.join(directory, "features.tsv"), encoding="utf-8") as fh:
        for line in fh:
            r, c, v = line.rstrip("\n").split("\t")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    n_nodes = len(user_ids) + len(article_ids)
    n_cols = n_feature_cols or (max(cols) + 1 if cols else 1)
    features = sp.csr_matrix(
        (vals, (rows, cols)), shape=(n_nodes, n_cols), dtype=np.float64
    )
    graph = CommunityGraph(
        len(user_ids), len(article_ids), edges, features,
        np.array(labels), np.array(split, dtype=object),
    )
    return graph, user_ids, article_ids
