"""Contrastive representation learning for polarimetric SAR coherency data.

The package is organized around the stages of the pipeline:

- `polsar`: coherency-matrix data model, synthetic scene generation,
  pixel featurization, and patch extraction.
- `cluster`: revised-Wishart-distance metric and prototype clustering.
- `diversity`: affinity graphs and max-affinity pruning used to assemble
  the unsupervised pretraining set.
- `nn`: minimal differentiable kernels (conv / ReLU / pool / GAP / FC)
  with hand-written backward passes and finite-difference checking.
- `contrastive`: two-stream encoder, memory bank, InfoNCE, and the
  pretraining loop.
- `classify`: frozen-encoder linear classification and OA/AA/Kappa
  evaluation.
- `fileio`: binary containers (.t3b, .lbl, .pds, .ckpt) and PNG maps.
- `cli`: command-line orchestration.
"""

from pclnet.polsar import (
    CoherencyValidation,
    LabelMap,
    PolSARScene,
    SyntheticSceneSpec,
    extract_patch,
    matrix_to_features,
    features_to_matrix,
    patch_mean_coherency,
    pixel_features,
    rotate180,
    sample_wishart,
    synth_scene,
    validate_coherency,
)
from pclnet.cluster import (
    ClusterModel,
    assign_cluster,
    revised_wishart_distance,
    update_prototypes,
    wishart_cluster,
)
from pclnet.diversity import (
    AffinityGraph,
    PretrainDataset,
    affinity,
    build_affinity_graph,
    collect_dataset,
    prune_cluster,
)

__all__ = [
    "AffinityGraph",
    "ClusterModel",
    "CoherencyValidation",
    "LabelMap",
    "PolSARScene",
    "PretrainDataset",
    "SyntheticSceneSpec",
    "affinity",
    "assign_cluster",
    "build_affinity_graph",
    "collect_dataset",
    "extract_patch",
    "features_to_matrix",
    "matrix_to_features",
    "patch_mean_coherency",
    "pixel_features",
    "prune_cluster",
    "revised_wishart_distance",
    "rotate180",
    "sample_wishart",
    "synth_scene",
    "update_prototypes",
    "validate_coherency",
    "wishart_cluster",
]
