"""Two-stream contrastive pretraining with a FIFO memory bank.

The main encoder processes anchor patches; an auxiliary encoder with
identical topology processes the 180-degree-rotated positives and is
updated only by an exponential moving average of the main parameters.
Negatives come from a batch-granular FIFO memory bank of past positives.
"""

from dataclasses import dataclass, field

import numpy as np

from pclnet import nn
from pclnet.polsar import rotate180


@dataclass
class EncoderState:
    """Main and auxiliary encoder parameters (identical shapes)."""

    main: dict
    auxiliary: dict
    plan: nn.EncoderPlan


def init_state(plan, rng):
    """Fresh encoder state with auxiliary initialized equal to main."""
    main = nn.init_encoder(plan, rng)
    return EncoderState(main, nn.params_copy(main), plan)


def encode(params, batch, plan, with_head=True):
    """Projection-head output (or GAP features) for a batch of patches."""
    out, _ = nn.encoder_forward(params, batch, plan, with_head=with_head)
    return out


def cosine_similarity(a, b):
    """a.b / (|a| |b|); raises on a zero vector."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate representation: zero vector")
    return float(np.dot(a, b) / (na * nb))


def _normalize_rows(x, label):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError(f"degenerate representation: zero vector in {label}")
    return x / norms, norms


def info_nce(anchors, positives, negatives, temperature):
    """Memory-bank InfoNCE loss and analytic gradients.

    loss = -sum_i log( exp(cos(o_i, o_i+)/t)
                       / (exp(cos(o_i, o_i+)/t) + sum_j exp(cos(o_i, n_j)/t)) )

    Returns (loss, grad_anchors, grad_positives); the negatives are treated
    as constants and receive no gradient.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if anchors.shape != positives.shape:
        raise ValueError("anchor/positive batch mismatch")
    if negatives.shape[0] == 0:
        raise ValueError("empty negative set")

    u, nu = _normalize_rows(anchors, "anchors")       # (N, D)
    v, nv = _normalize_rows(positives, "positives")   # (N, D)
    w, _ = _normalize_rows(negatives, "negatives")    # (K, D)

    pos_logit = np.sum(u * v, axis=1) / temperature            # (N,)
    neg_logits = (u @ w.T) / temperature                       # (N, K)
    logits = np.concatenate([pos_logit[:, None], neg_logits], axis=1)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.sum(lse - pos_logit))

    probs = np.exp(logits - lse[:, None])                      # (N, K+1)
    # d loss / d logits
    dlogits = probs.copy()
    dlogits[:, 0] -= 1.0
    # back through the cosine similarities
    du = (dlogits[:, :1] * v + dlogits[:, 1:] @ w) / temperature
    grad_anchors = (du - np.sum(du * u, axis=1, keepdims=True) * u) / nu
    dv = dlogits[:, :1] * u / temperature
    grad_positives = (dv - np.sum(dv * v, axis=1, keepdims=True) * v) / nv
    nn._check_finite(loss, "info_nce loss")
    return loss, grad_anchors, grad_positives


class MemoryBank:
    """Batch-granular FIFO queue of encoded positives used as negatives."""

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._batches = []
        self._batch_size = None

    @property
    def fill(self):
        return sum(len(b) for b in self._batches)

    def enqueue(self, batch):
        """Append a batch; evict the oldest batch when over capacity."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise ValueError("bank batch shape mismatch")
        if self._batch_size is None:
            if self.capacity % len(batch) != 0:
                raise ValueError("batch size must divide bank capacity")
            self._batch_size = len(batch)
        elif len(batch) != self._batch_size:
            raise ValueError("batch size changed mid-run")
        self._batches.append(batch.copy())
        while self.fill > self.capacity:
            self._batches.pop(0)

    def contents(self):
        """All stored vectors, oldest first, as a (fill, dim) array."""
        if not self._batches:
            return np.zeros((0, self.dim))
        return np.concatenate(self._batches, axis=0)


@dataclass(frozen=True)
class PretrainConfig:
    """Hyperparameters of the unsupervised pretraining loop."""

    epochs: int = 800
    batch_size: int = 512
    bank_capacity: int = 8192
    momentum: float = 0.999
    temperature: float = 0.4
    sgd: nn.SgdConfig = field(default_factory=nn.SgdConfig)
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.momentum < 1):
            raise ValueError("momentum must be in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.bank_capacity % self.batch_size != 0:
            raise ValueError("bank capacity must be a multiple of batch size")


def momentum_update(main, auxiliary, momentum):
    """EMA update: aux <- m * aux + (1 - m) * main, elementwise."""
    if main.keys() != auxiliary.keys():
        raise ValueError("parameter sets do not match")
    out = {}
    for name, p in main.items():
        q = auxiliary[name]
        if q.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}")
        out[name] = momentum * q + (1.0 - momentum) * p
    return out


@dataclass
class PretrainResult:
    """Trained conv-encoder parameters plus the per-step loss trace."""

    theta: dict                  # conv encoder only; head discarded
    state: EncoderState          # full final two-stream state
    trace: list                  # rows: (epoch, step, loss, lr, bank_fill)


def pretrain(dataset, config, plan=None):
    """Run the contrastive pretraining loop over anchor patches.

    Per mini-batch: positives are the 180-degree rotations of the anchors;
    anchors go through the main encoder, positives through the auxiliary
    one; the InfoNCE loss against the memory bank drives an SGD update of
    the main parameters; the auxiliary parameters follow by momentum; the
    positives are then enqueued. The very first step only fills the bank
    (no loss, no update) so the loss never sees self-negatives.
    Deterministic given config.seed.
    """
    patches = np.asarray(dataset.patches if hasattr(dataset, "patches")
                         else dataset, dtype=np.float64)
    if len(patches) == 0:
        raise ValueError("empty pretraining dataset")
    if plan is None:
        plan = nn.EncoderPlan(in_channels=patches.shape[1],
                              patch_size=patches.shape[2])
    rng = np.random.default_rng([config.seed, 424242])
    state = init_state(plan, rng)
    bank = MemoryBank(config.bank_capacity, plan.output_dim)

    # Full batches only: the bank is batch-granular, so a ragged tail batch
    # cannot be enqueued. Shuffling each epoch rotates which samples sit in
    # the dropped remainder.
    batch = min(config.batch_size, len(patches))
    if config.bank_capacity % batch != 0:
        raise ValueError("effective batch size must divide bank capacity")
    steps_per_epoch = len(patches) // batch
    trace = []
    first_step = True
    for epoch in range(config.epochs):
        order = rng.permutation(len(patches))
        for step in range(steps_per_epoch):
            idx = order[step * batch:(step + 1) * batch]
            anchors = patches[idx]
            positives = np.stack([rotate180(p) for p in anchors])

            pos_out, _ = nn.encoder_forward(state.auxiliary, positives, plan)
            if first_step:
                bank.enqueue(pos_out)
                trace.append((epoch, step, 0.0, nn.lr_at(epoch, config.sgd),
                              bank.fill))
                first_step = False
                continue

            anchor_out, cache = nn.encoder_forward(state.main, anchors, plan)
            negatives = bank.contents()
            loss, grad_anchor, _ = info_nce(anchor_out, pos_out, negatives,
                                            config.temperature)
            grads = nn.encoder_backward(state.main, cache, grad_anchor, plan)
            state.main = nn.sgd_step(state.main, grads, epoch, config.sgd)
            state.auxiliary = momentum_update(state.main, state.auxiliary,
                                              config.momentum)
            bank.enqueue(pos_out)
            trace.append((epoch, step, loss, nn.lr_at(epoch, config.sgd),
                          bank.fill))

    theta = {name: state.main[name].copy()
             for name in nn.conv_param_names(plan)}
    return PretrainResult(theta, state, trace)


def write_loss_trace_csv(path, trace):
    """Loss trace CSV: epoch, step, loss, learning_rate, bank_fill."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "learning_rate", "bank_fill"])
        for epoch, step, loss, lr, fill in trace:
            writer.writerow([epoch, step, repr(float(loss)), repr(float(lr)),
                             fill])
