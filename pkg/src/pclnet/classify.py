"""Frozen-encoder linear classification and OA/AA/Kappa evaluation.

Downstream features are the 64-dim GAP outputs of the pretrained conv
encoder; the projection head is discarded. Only the linear softmax head
is trained during fine-tuning.
"""

from dataclasses import dataclass

import numpy as np

from pclnet import nn
from pclnet.polsar import LabelMap, extract_patches, standardize_patches


@dataclass
class LinearClassifier:
    """Softmax head on frozen features: logits = W h + b."""

    weights: np.ndarray  # (C, feature_dim)
    biases: np.ndarray   # (C,)

    @property
    def num_classes(self):
        return len(self.biases)


def encode_features(theta, patches, plan):
    """Frozen GAP feature vectors (N, feature_dim) for a patch batch."""
    params = dict(theta)
    # The head is absent from theta; forward stops at GAP.
    out, _ = nn.encoder_forward(params, patches, plan, with_head=False)
    return out


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def classify_logits(theta, classifier, patches, plan):
    """Class probability rows for a batch of patches; rows sum to 1."""
    h = encode_features(theta, patches, plan)
    return softmax(h @ classifier.weights.T + classifier.biases)


def finetune(theta, patches, labels, num_classes, plan,
             epochs=300, learning_rate=0.01, batch_size=32, seed=0):
    """Train the linear head by mini-batch SGD on cross-entropy.

    The encoder parameters are frozen: gradients touch only the head's
    weights and biases. Every class in 1..num_classes must appear in
    `labels`. Deterministic given seed.
    """
    labels = np.asarray(labels)
    present = set(int(v) for v in labels)
    missing = [c for c in range(1, num_classes + 1) if c not in present]
    if missing:
        raise ValueError(f"uncovered class: {missing}")

    features = encode_features(theta, np.asarray(patches, dtype=np.float64),
                               plan)
    targets = labels - 1
    n, dim = features.shape
    rng = np.random.default_rng([seed, 77])
    w = np.zeros((num_classes, dim))
    b = np.zeros(num_classes)
    batch_size = min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x = features[idx]
            y = targets[idx]
            probs = softmax(x @ w.T + b)
            probs[np.arange(len(idx)), y] -= 1.0
            probs /= len(idx)
            w -= learning_rate * (probs.T @ x)
            b -= learning_rate * probs.sum(axis=0)
    return LinearClassifier(w, b)


def predict_map(scene, theta, classifier, plan, norm_stats=None,
                batch_size=256):
    """Classify every pixel of the scene into a LabelMap (classes 1..C).

    Ties in the argmax resolve to the lowest class index. `norm_stats`
    is the (mean, std) pair used during training; defaults to the scene's
    own channel statistics.
    """
    if norm_stats is None:
        norm_stats = scene.channel_stats()
    mean, std = norm_stats
    rows, cols = np.meshgrid(np.arange(scene.height), np.arange(scene.width),
                             indexing="ij")
    positions = np.stack([rows.ravel(), cols.ravel()], axis=1)
    out = np.empty(len(positions), dtype=np.int32)
    for start in range(0, len(positions), batch_size):
        chunk = positions[start:start + batch_size]
        patches = extract_patches(scene, chunk, plan.patch_size)
        patches = standardize_patches(patches, mean, std)
        probs = classify_logits(theta, classifier, patches, plan)
        out[start:start + len(chunk)] = np.argmax(probs, axis=1) + 1
    return LabelMap(out.reshape(scene.height, scene.width),
                    classifier.num_classes)


@dataclass(frozen=True)
class EvalReport:
    """Confusion matrix with OA, AA, and the kappa coefficient."""

    confusion: np.ndarray       # (C, C), rows = truth, cols = prediction
    per_class_accuracy: np.ndarray
    overall_accuracy: float
    average_accuracy: float
    kappa: float


def confusion_matrix(pred_labels, true_labels, num_classes):
    """Count matrix over labeled pixels only (truth label 0 excluded)."""
    mask = true_labels > 0
    if not np.any(mask):
        raise ValueError("no labeled pixels")
    t = true_labels[mask] - 1
    p = pred_labels[mask] - 1
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    return conf


def report_from_confusion(conf):
    conf = np.asarray(conf, dtype=np.float64)
    total = conf.sum()
    if total == 0:
        raise ValueError("no labeled pixels")
    row_sums = conf.sum(axis=1)
    col_sums = conf.sum(axis=0)
    correct = np.trace(conf)
    oa = correct / total
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_sums > 0, np.diag(conf) / row_sums, np.nan)
    aa = float(np.nanmean(per_class))
    pe = float(np.sum(row_sums * col_sums) / total**2)
    kappa = (oa - pe) / (1.0 - pe) if pe < 1.0 else 1.0
    return EvalReport(conf.astype(np.int64), per_class, float(oa), aa,
                      float(kappa))


def evaluate(pred, truth):
    """OA/AA/Kappa of a predicted LabelMap against ground truth."""
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("label map shapes differ")
    conf = confusion_matrix(pred.labels, truth.labels, truth.num_classes)
    return report_from_confusion(conf)


def write_report(path, report):
    """Plain-text report plus the raw confusion matrix."""
    lines = [
        f"overall_accuracy: {report.overall_accuracy:.6f}",
        f"average_accuracy: {report.average_accuracy:.6f}",
        f"kappa: {report.kappa:.6f}",
        "per_class_accuracy: "
        + ", ".join(f"{v:.6f}" for v in report.per_class_accuracy),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_confusion_csv(path, report):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        c = report.confusion.shape[0]
        writer.writerow(["truth\\pred"] + [f"class_{j+1}" for j in range(c)])
        for i in range(c):
            writer.writerow([f"class_{i+1}"] + list(report.confusion[i]))
