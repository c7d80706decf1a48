"""Revised Wishart distance and unsupervised prototype clustering.

The distance between two coherency matrices T, V is
d_W(T, V) = 0.5 * tr(T V^-1 + V T^-1) - 3, which is symmetric and zero
iff T == V. Clustering follows the classic assign/update loop of the
unsupervised Wishart classifier with arithmetic-mean prototype updates.
"""

import csv
from dataclasses import dataclass

import numpy as np

from pclnet.polsar import regularize

MATRIX_DIM = 3


@dataclass(frozen=True)
class ClusterModel:
    """Prototypes with per-sample assignments after clustering."""

    prototypes: np.ndarray   # (K, 3, 3) complex
    assignments: np.ndarray  # (N,) int
    num_clusters: int
    iterations_run: int


def _pairwise_terms(mats_a, inv_b):
    """tr(A_n B_k^-1) for all pairs, as a real (N, K) matrix."""
    return np.einsum("nij,kji->nk", mats_a, inv_b).real


def pairwise_distances(samples, prototypes):
    """Revised Wishart distance between every sample and every prototype."""
    samples = regularize(np.asarray(samples, dtype=np.complex128))
    prototypes = regularize(np.asarray(prototypes, dtype=np.complex128))
    inv_s = np.linalg.inv(samples)
    inv_p = np.linalg.inv(prototypes)
    d = 0.5 * (_pairwise_terms(samples, inv_p)
               + _pairwise_terms(prototypes, inv_s).T) - MATRIX_DIM
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("distance overflow")
    return d


def revised_wishart_distance(t, v):
    """d_W(T, V) = 0.5 tr(T V^-1 + V T^-1) - 3 for a single pair."""
    d = pairwise_distances(np.asarray(t)[None], np.asarray(v)[None])[0, 0]
    return float(d)


def assign_cluster(t, prototypes):
    """Index of the nearest prototype; ties go to the lowest index."""
    prototypes = np.asarray(prototypes)
    if prototypes.size == 0:
        raise ValueError("no prototypes")
    d = pairwise_distances(np.asarray(t)[None], prototypes)[0]
    return int(np.argmin(d))


def _assign_all(samples, prototypes):
    d = pairwise_distances(samples, prototypes)
    return np.argmin(d, axis=1), d


def update_prototypes(samples, assignments, num_clusters):
    """Arithmetic-mean prototype update with farthest-point repair.

    An empty cluster is re-seeded with the sample farthest (in d_W) from
    that cluster's current prototype; the repair is deterministic.
    """
    samples = np.asarray(samples, dtype=np.complex128)
    assignments = np.asarray(assignments)
    protos = np.empty((num_clusters, MATRIX_DIM, MATRIX_DIM), dtype=np.complex128)
    empties = []
    for k in range(num_clusters):
        members = samples[assignments == k]
        if len(members) == 0:
            empties.append(k)
        else:
            protos[k] = members.mean(axis=0)
    for k in empties:
        current = samples[assignments == k]
        # No members: measure from the global mean stand-in so the repair
        # is well-defined on the first empty occurrence.
        anchor = samples.mean(axis=0) if len(current) == 0 else current.mean(axis=0)
        d = pairwise_distances(samples, anchor[None])[:, 0]
        protos[k] = samples[int(np.argmax(d))]
    return protos


def wishart_cluster(samples, num_clusters, max_iter=50, rng=None):
    """Cluster coherency matrices by the revised Wishart distance.

    Initial prototypes are `num_clusters` distinct samples drawn without
    replacement from `rng`. Iterates assign/update until the assignment
    vector stabilizes or `max_iter` is reached; the returned assignments
    are exactly argmin against the returned prototypes.
    """
    samples = np.asarray(samples, dtype=np.complex128)
    n = len(samples)
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    if n < num_clusters:
        raise ValueError("fewer samples than clusters")
    if rng is None:
        rng = np.random.default_rng()

    init_idx = rng.choice(n, size=num_clusters, replace=False)
    protos = samples[init_idx].copy()
    assignments, _ = _assign_all(samples, protos)
    iterations = 0
    for _ in range(max_iter):
        protos = update_prototypes(samples, assignments, num_clusters)
        new_assignments, _ = _assign_all(samples, protos)
        iterations += 1
        stable = np.array_equal(new_assignments, assignments)
        assignments = new_assignments
        if stable:
            break

    # Guarantee no empty cluster in the returned model.
    extra = 0
    while len(np.unique(assignments)) < num_clusters and extra < max_iter:
        protos = update_prototypes(samples, assignments, num_clusters)
        assignments, _ = _assign_all(samples, protos)
        extra += 1

    return ClusterModel(protos, assignments, num_clusters, iterations)


def export_assignments_csv(path, model, samples):
    """Write sample_index, cluster_index, distance_to_prototype rows."""
    d = pairwise_distances(np.asarray(samples), model.prototypes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "cluster_index", "distance_to_prototype"])
        for i, k in enumerate(model.assignments):
            writer.writerow([i, int(k), repr(float(d[i, k]))])
