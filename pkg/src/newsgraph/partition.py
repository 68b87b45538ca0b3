"""Greedy edge-locality graph partitioner and cluster-batch sampling.

Mini-batch training samples groups of dense clusters and restores every
original edge among the sampled nodes, so cross-cluster edges between
co-sampled clusters are kept. The partitioner replaces a true min-cut
library with a deterministic heuristic: seeds spread by connectivity,
clusters grown by accreting the frontier node with the most edges into
the cluster, then a size-rebalancing pass. Training only needs dense-ish
balanced clusters, not an optimal cut.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import CommunityGraph, GraphView

__all__ = ["ClusterPartition", "GraphBatch", "partition", "sample_batch", "full_batch"]

DEFAULT_CLUSTERS = 300
DEFAULT_BATCH_CLUSTERS = 16


class ClusterPartition:
    def __init__(self, graph: CommunityGraph, assignment: np.ndarray, k: int):
        self.graph = graph
        self.assignment = assignment
        self.num_clusters = k
        self.cluster_nodes = [
            np.flatnonzero(assignment == c) for c in range(k)
        ]

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.cluster_nodes])


class GraphBatch:
    """A merged subgraph with local node indexing.

    ``node_ids`` maps local -> original index. Article-aligned arrays
    (labels, split) follow the local article order; users carry no label.
    """

    def __init__(self, graph: CommunityGraph, node_ids: np.ndarray):
        self.node_ids = node_ids
        self.n = len(node_ids)
        local = {int(g): i for i, g in enumerate(node_ids)}
        mask = np.zeros(graph.n_nodes, dtype=bool)
        mask[node_ids] = True
        keep = mask[graph.edge_a] & mask[graph.edge_b]
        remap = np.full(graph.n_nodes, -1, dtype=np.int64)
        remap[node_ids] = np.arange(self.n)
        self.edge_a = remap[graph.edge_a[keep]]
        self.edge_b = remap[graph.edge_b[keep]]
        self.edge_rel = graph.edge_rel[keep]
        self.features = graph.features[node_ids]
        self.is_article = node_ids >= graph.n_users
        art_local = np.flatnonzero(self.is_article)
        art_orig = node_ids[art_local] - graph.n_users
        self.article_local = art_local
        self.labels = graph.labels[art_orig]
        self.split = graph.split[art_orig]
        self.view = GraphView(self.n, self.edge_a, self.edge_b, self.edge_rel)
        self._local = local

    @property
    def n_edges(self) -> int:
        return len(self.edge_a)

    def labeled_nodes(self, split: str):
        """Local indices and labels of articles in the given split."""
        sel = self.split == split
        return self.article_local[sel], self.labels[sel]


def full_batch(graph: CommunityGraph) -> GraphBatch:
    return GraphBatch(graph, np.arange(graph.n_nodes))


def _adjacency_lists(graph: CommunityGraph):
    rows = np.concatenate([graph.edge_a, graph.edge_b])
    cols = np.concatenate([graph.edge_b, graph.edge_a])
    adj = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(graph.n_nodes, graph.n_nodes)
    )
    adj.sort_indices()
    return adj.indptr, adj.indices


def partition(graph: CommunityGraph, k: int, seed: int = 0) -> ClusterPartition:
    """Partition nodes into k clusters, balanced within +/-20% of n/k."""
    n = graph.n_nodes
    if k > n:
        raise ValueError(f"cannot make {k} clusters from {n} nodes")
    if k == n:
        return ClusterPartition(graph, np.arange(n), k)
    if k == 1:
        return ClusterPartition(graph, np.zeros(n, dtype=np.int64), k)

    indptr, indices = _adjacency_lists(graph)
    degree = np.diff(indptr)
    rng = np.random.default_rng(seed)
    # Random per-node priority: the final tie-break, so different seeds can
    # produce different (equally valid) partitions.
    priority = rng.permutation(n)

    assignment = np.full(n, -1, dtype=np.int64)
    cap = int(np.ceil(1.2 * n / k))
    sizes = np.zeros(k, dtype=np.int64)

    # Seed selection: highest degree first, then nodes least connected to
    # already-seeded clusters (connectivity spread).
    conn = np.zeros(n, dtype=np.int64)
    order_key = np.lexsort((priority, -degree))
    first = order_key[0]
    seeds = [first]
    assignment[first] = 0
    sizes[0] = 1
    conn[indices[indptr[first]:indptr[first + 1]]] += 1
    for c in range(1, k):
        best, best_key = -1, None
        for v in range(n):
            if assignment[v] >= 0:
                continue
            key = (conn[v], -degree[v], priority[v])
            if best_key is None or key < best_key:
                best, best_key = v, key
        seeds.append(best)
        assignment[best] = c
        sizes[c] = 1
        conn[indices[indptr[best]:indptr[best + 1]]] += 1

    # Frontier growth, round-robin: each cluster accretes the unassigned
    # neighbor with the most edges into it.
    frontiers: list[dict[int, int]] = [dict() for _ in range(k)]
    for c, s in enumerate(seeds):
        for nb in indices[indptr[s]:indptr[s + 1]]:
            if assignment[nb] < 0:
                frontiers[c][int(nb)] = frontiers[c].get(int(nb), 0) + 1
    remaining = n - k
    while remaining > 0:
        progressed = False
        for c in range(k):
            if sizes[c] >= cap or remaining == 0:
                continue
            front = frontiers[c]
            while front:
                best, best_key = -1, None
                for v, cnt in front.items():
                    if assignment[v] >= 0:
                        continue
                    key = (-cnt, -degree[v], priority[v])
                    if best_key is None or key < best_key:
                        best, best_key = v, key
                if best < 0:
                    front.clear()
                    break
                assignment[best] = c
                sizes[c] += 1
                remaining -= 1
                progressed = True
                front.pop(best, None)
                for nb in indices[indptr[best]:indptr[best + 1]]:
                    if assignment[nb] < 0:
                        front[int(nb)] = front.get(int(nb), 0) + 1
                break
        if not progressed:
            # Disconnected leftovers: hand each to the smallest open cluster.
            for v in np.lexsort((priority, -degree)):
                if assignment[v] >= 0:
                    continue
                open_clusters = [c for c in range(k) if sizes[c] < cap]
                target = min(open_clusters, key=lambda c: (sizes[c], c))
                assignment[v] = target
                sizes[target] += 1
                remaining -= 1
                for nb in indices[indptr[v]:indptr[v + 1]]:
                    if assignment[nb] < 0:
                        frontiers[target][int(nb)] = (
                            frontiers[target].get(int(nb), 0) + 1
                        )
            break

    _rebalance(assignment, sizes, indptr, indices, degree, priority, n, k)
    return ClusterPartition(graph, assignment, k)


def _rebalance(assignment, sizes, indptr, indices, degree, priority, n, k):
    """Move loosely attached nodes from the largest into undersized
    clusters until every size is within the +/-20% band."""
    floor = int(np.floor(0.8 * n / k))
    cap = int(np.ceil(1.2 * n / k))
    for _ in range(4 * n):
        small = int(np.argmin(sizes))
        large = int(np.argmax(sizes))
        if sizes[small] >= floor and sizes[large] <= cap:
            break
        if sizes[large] <= 1 or small == large:
            break
        members = np.flatnonzero(assignment == large)
        best, best_key = -1, None
        for v in members:
            intra = 0
            for nb in indices[indptr[v]:indptr[v + 1]]:
                if assignment[nb] == large:
                    intra += 1
            key = (intra, -degree[v], priority[v])
            if best_key is None or key < best_key:
                best, best_key = int(v), key
        assignment[best] = small
        sizes[large] -= 1
        sizes[small] += 1


def sample_batch(part: ClusterPartition, batch_clusters: int, rng) -> GraphBatch:
    """Merge ``batch_clusters`` sampled clusters; all original edges among
    the union of their nodes are restored."""
    if batch_clusters > part.num_clusters:
        raise ValueError(
            f"requested {batch_clusters} clusters, partition has {part.num_clusters}"
        )
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    chosen = rng.choice(part.num_clusters, size=batch_clusters, replace=False)
    nodes = np.sort(np.concatenate([part.cluster_nodes[c] for c in chosen]))
    return GraphBatch(part.graph, nodes)


def merge_clusters(part: ClusterPartition, cluster_ids) -> GraphBatch:
    """Deterministic variant of sample_batch for a fixed cluster set."""
    nodes = np.sort(np.concatenate([part.cluster_nodes[c] for c in cluster_ids]))
    return GraphBatch(part.graph, nodes)


def auto_cluster_count(n_nodes: int, requested: int = DEFAULT_CLUSTERS) -> int:
    """Scale the default 300-cluster setting down for small graphs."""
    return min(requested, max(4, n_nodes // 50))
