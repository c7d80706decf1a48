"""Collect a diverse, unlabeled pretraining set from a scene.

Candidate patches are clustered, then each cluster is thinned by repeatedly
finding the pair with the highest affinity exp(-d^2 / (2 gamma^2)) and
removing one endpoint at random, until at most M samples remain. Redundant
near-duplicates go first, so the survivors spread out over the cluster.
"""

import numpy as np

from pclnet import cluster, diversity, polsar

scene, _ = polsar.synth_scene(polsar.vertical_band_spec(
    32, 96, polsar.default_class_covariances(3), looks=8, seed=0))

positions = diversity.candidate_positions(scene.height, scene.width, stride=4)
print(f"candidate grid: {len(positions)} patch centers (stride 4)")

mats = polsar.patch_mean_coherency_many(scene, positions, size=15)
model = cluster.wishart_cluster(mats, num_clusters=4, max_iter=30,
                                rng=np.random.default_rng(1))

# Pruning in one cluster, step by step.
members = np.nonzero(model.assignments == 0)[0]
graph = diversity.build_affinity_graph(mats[members], node_ids=members,
                                       gamma=0.42)
result = diversity.prune_cluster(graph, max_keep=10,
                                 rng=np.random.default_rng(2))
print(f"cluster 0: {len(members)} members -> {len(result.retained)} kept, "
      f"{len(result.audit)} removals audited")
p, q, removed = result.audit[0]
print(f"first removal: samples {p} and {q} were the closest pair; "
      f"dropped {removed}")

# The full collection pass does this for every cluster and extracts patches.
dataset = diversity.collect_dataset(scene, model, positions, gamma=0.42,
                                    max_per_cluster=10, patch_size=15, seed=0)
print(f"collected dataset: {len(dataset)} patches of shape "
      f"{dataset.patches.shape[1:]}, from {len(set(dataset.cluster_ids))} "
      "clusters")
