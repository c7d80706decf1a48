"""Affinity graphs and max-affinity pruning for pretraining-set assembly.

Within each cluster a fully connected graph is built whose edge weights
are Gaussian-kernel affinities of the revised Wishart distance. Nodes are
removed one at a time: locate the largest off-diagonal affinity among the
survivors, then drop one of its two endpoints by a seeded fair coin,
until at most M nodes remain. Surviving nodes become pretraining anchors.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from pclnet.cluster import pairwise_distances, revised_wishart_distance
from pclnet.polsar import extract_patches, patch_mean_coherency_many

DEFAULT_GAMMA = 0.42
DEFAULT_STRIDE = 4


_AFFINITY_FLOOR = np.finfo(np.float64).tiny


def affinity(t_p, t_q, gamma):
    """Gaussian-kernel affinity exp(-d_W(Tp, Tq)^2 / (2 gamma^2)) in (0, 1].

    Floored at the smallest positive normal float so distant pairs cannot
    underflow out of the documented range.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    d = revised_wishart_distance(t_p, t_q)
    return float(max(np.exp(-(d * d) / (2.0 * gamma * gamma)),
                     _AFFINITY_FLOOR))


@dataclass(frozen=True)
class AffinityGraph:
    """Fully connected affinity graph over one cluster's samples."""

    node_ids: np.ndarray  # (N,) sample indices
    matrix: np.ndarray    # (N, N) symmetric, diagonal 1, entries in (0, 1]


def build_affinity_graph(cluster_mats, node_ids=None, gamma=DEFAULT_GAMMA):
    """Pairwise affinities for one cluster; diagonal pinned to 1.

    Only the upper triangle is computed; the lower triangle is mirrored.
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    cluster_mats = np.asarray(cluster_mats, dtype=np.complex128)
    n = len(cluster_mats)
    if n < 1:
        raise ValueError("empty cluster")
    if node_ids is None:
        node_ids = np.arange(n)
    d = pairwise_distances(cluster_mats, cluster_mats)
    a = np.exp(-np.square(np.triu(d, 1)) / (2.0 * gamma * gamma))
    a = np.maximum(a, _AFFINITY_FLOOR)
    a = np.triu(a, 1)
    a = a + a.T
    np.fill_diagonal(a, 1.0)
    return AffinityGraph(np.asarray(node_ids), a)


@dataclass(frozen=True)
class PruneResult:
    """Survivors of max-affinity pruning plus an audit of each removal."""

    retained: np.ndarray  # ascending node ids
    audit: tuple          # ((p, q, removed), ...) in removal order, node ids


def prune_cluster(graph, max_keep, rng):
    """Iteratively remove endpoints of the currently max-affinity edge.

    Ties between equal maximal affinities resolve to the lexicographically
    smallest (p, q) pair; the endpoint to drop is a fair coin from `rng`.
    Returns all nodes when the cluster is already small enough.
    """
    if max_keep < 1:
        raise ValueError("max_keep must be >= 1")
    n = len(graph.node_ids)
    work = graph.matrix.astype(np.float64).copy()
    np.fill_diagonal(work, -np.inf)
    alive = np.ones(n, dtype=bool)
    audit = []
    count = n
    while count > max_keep:
        # Row-major argmax over the upper triangle is exactly the
        # lexicographic (p, q) tie-break.
        masked = np.where(alive[:, None] & alive[None, :], work, -np.inf)
        masked[np.tril_indices(n)] = -np.inf
        flat = int(np.argmax(masked))
        p, q = divmod(flat, n)
        drop = p if rng.integers(2) == 0 else q
        alive[drop] = False
        count -= 1
        audit.append((int(graph.node_ids[p]), int(graph.node_ids[q]),
                      int(graph.node_ids[drop])))
    retained = np.sort(graph.node_ids[alive])
    return PruneResult(retained, tuple(audit))


def candidate_positions(height, width, stride=DEFAULT_STRIDE):
    """(row, col) grid of candidate samples at the given stride."""
    rows = np.arange(0, height, stride)
    cols = np.arange(0, width, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


@dataclass(frozen=True)
class PretrainDataset:
    """Anchor patches with provenance for unsupervised pretraining."""

    patches: np.ndarray      # (M, 9, size, size) float64
    positions: np.ndarray    # (M, 2) scene (row, col)
    cluster_ids: np.ndarray  # (M,) originating cluster per sample

    def __len__(self):
        return len(self.patches)


def collect_dataset(scene, cluster_model, positions, gamma, max_per_cluster,
                    patch_size, seed):
    """Assemble the diversified pretraining set from a clustered scene.

    `positions` are the candidate (row, col) pixels aligned with
    `cluster_model.assignments`. Per cluster: build the affinity graph over
    patch-mean coherency matrices, prune to `max_per_cluster`, and keep the
    anchor patches at the surviving positions. Each cluster gets its own
    seeded substream so results do not depend on scheduling order.
    """
    positions = np.asarray(positions)
    mean_mats = patch_mean_coherency_many(scene, positions, patch_size)
    keep_ids = []
    keep_clusters = []
    for k in range(cluster_model.num_clusters):
        member_ids = np.flatnonzero(cluster_model.assignments == k)
        if len(member_ids) == 0:
            continue
        graph = build_affinity_graph(mean_mats[member_ids], member_ids, gamma)
        rng = np.random.default_rng([seed, 2718, k])
        result = prune_cluster(graph, max_per_cluster, rng)
        keep_ids.extend(int(i) for i in result.retained)
        keep_clusters.extend([k] * len(result.retained))
    order = np.argsort(keep_ids)
    keep_ids = np.asarray(keep_ids)[order]
    keep_clusters = np.asarray(keep_clusters)[order]
    patches = extract_patches(scene, positions[keep_ids], patch_size)
    return PretrainDataset(patches, positions[keep_ids], keep_clusters)


def write_manifest_csv(path, dataset):
    """Dataset manifest: sample_id, row, col, cluster_id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "row", "col", "cluster_id"])
        for i, ((row, col), k) in enumerate(zip(dataset.positions,
                                                dataset.cluster_ids)):
            writer.writerow([i, int(row), int(col), int(k)])
