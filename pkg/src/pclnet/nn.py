"""Minimal differentiable kernels with hand-written backward passes.

Everything operates on float64 numpy arrays. Forward functions return the
output plus whatever the matching backward function needs; there is no
autodiff graph. Any non-finite value raises immediately instead of
propagating.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def _check_finite(x, label):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {label}")
    return x


# ---------------------------------------------------------------------------
# layer kernels: 3x3 conv (stride 1, zero pad 1), ReLU, 2x2 max pool,
# global average pooling, fully connected
# ---------------------------------------------------------------------------

def conv2d(x, w, b):
    """3x3 convolution, stride 1, zero padding 1: v_i = sum_d w_id * x_d + b_i.

    x: (N, C, H, W), w: (F, C, 3, 3), b: (F,) -> (N, F, H, W).
    """
    if w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
        raise ValueError("conv2d shape mismatch")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))
    out = np.einsum("nchwij,fcij->nfhw", windows, w, optimize=True)
    out += b[None, :, None, None]
    return _check_finite(out, "conv2d output")


def conv2d_backward(x, w, grad_out):
    """Gradients of conv2d w.r.t. input, kernels, and biases."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))
    grad_w = np.einsum("nchwij,nfhw->fcij", windows, grad_out, optimize=True)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    gp = np.pad(grad_out, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gwin = sliding_window_view(gp, (3, 3), axis=(2, 3))
    w_flip = w[:, :, ::-1, ::-1]
    grad_x = np.einsum("nfhwij,fcij->nchw", gwin, w_flip, optimize=True)
    return (_check_finite(grad_x, "conv2d grad_x"),
            _check_finite(grad_w, "conv2d grad_w"),
            _check_finite(grad_b, "conv2d grad_b"))


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    """Pass gradient where x > 0; exactly zero at and below 0."""
    return np.where(x > 0.0, grad_out, 0.0)


def maxpool2(x):
    """2x2 max pooling with stride 2; odd trailing rows/columns dropped."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError("maxpool2 needs spatial dims >= 2")
    ho, wo = h // 2, w // 2
    tiles = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    return tiles.max(axis=(3, 5))


def maxpool2_backward(x, grad_out):
    """Route each window's gradient to its first-occurrence argmax."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    tiles = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    flat = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    winners = np.argmax(flat, axis=-1)
    grad_flat = np.zeros_like(flat)
    np.put_along_axis(grad_flat, winners[..., None], grad_out[..., None], axis=-1)
    grad_tiles = grad_flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    grad_x = np.zeros_like(x)
    grad_x[:, :, :2 * ho, :2 * wo] = grad_tiles.reshape(n, c, 2 * ho, 2 * wo)
    return grad_x


def gap(x):
    """Global average pooling: (N, C, H, W) -> (N, C) spatial mean."""
    return x.mean(axis=(2, 3))


def gap_backward(x_shape, grad_out):
    """Distribute gradient uniformly over the pooled window."""
    n, c, h, w = x_shape
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w),
                           (n, c, h, w)).copy()


def fully_connected(x, w, b):
    """Affine map x @ W^T + b. x: (N, D), w: (F, D), b: (F,)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("fully_connected shape mismatch")
    return _check_finite(x @ w.T + b, "fully_connected output")


def fully_connected_backward(x, w, grad_out):
    grad_x = grad_out @ w
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SgdConfig:
    """Plain SGD with a stepwise learning-rate schedule."""

    learning_rate: float = 0.1
    milestones: tuple = (300, 500)
    factor: float = 0.5
    batch_size: int = 512

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.factor <= 1):
            raise ValueError("factor must be in (0, 1]")
        object.__setattr__(self, "milestones", tuple(self.milestones))


def lr_at(epoch, config):
    """lr(epoch) = lr0 * factor^(number of milestones <= epoch)."""
    hits = sum(1 for m in config.milestones if m <= epoch)
    return config.learning_rate * config.factor ** hits


def sgd_step(params, grads, epoch, config):
    """One SGD update p <- p - lr(epoch) * g; returns a new parameter dict."""
    lr = lr_at(epoch, config)
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"divergence: non-finite gradient for {name}")
        out[name] = p - lr * g
    return out


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float


def grad_check(func, point, tolerance=1e-4, step=1e-4):
    """Compare analytic gradients against central finite differences.

    `func(x)` must return (scalar value, gradient array at x). The caller
    is responsible for masking kinks (ReLU at 0, pooling ties).
    """
    point = np.asarray(point, dtype=np.float64)
    _, analytic = func(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.zeros_like(point)
    flat = point.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus, _ = func(point)
        flat[i] = orig - step
        minus, _ = func(point)
        flat[i] = orig
        num_flat[i] = (plus - minus) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom))
    return GradCheckReport(max_rel, max_rel <= tolerance, tolerance)


# ---------------------------------------------------------------------------
# encoder: [conv3x3 -> ReLU -> maxpool2] x len(conv_channels) -> GAP,
# optional projection head FC -> ReLU -> FC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderPlan:
    """Architecture constants for the convolutional encoder + head."""

    in_channels: int = 9
    conv_channels: tuple = (16, 32, 64)
    head_dims: tuple = (64, 32)
    patch_size: int = 15

    @property
    def feature_dim(self):
        return self.conv_channels[-1]

    @property
    def output_dim(self):
        return self.head_dims[1]


def init_encoder(plan, rng):
    """Kaiming-style fan-in uniform init for conv/FC weights, zero biases."""
    params = {}
    fan_prev = plan.in_channels
    for i, ch in enumerate(plan.conv_channels):
        fan_in = fan_prev * 9
        bound = np.sqrt(6.0 / fan_in)
        params[f"conv{i}.w"] = rng.uniform(-bound, bound, size=(ch, fan_prev, 3, 3))
        params[f"conv{i}.b"] = np.zeros(ch)
        fan_prev = ch
    dims = [plan.feature_dim, plan.head_dims[0], plan.head_dims[1]]
    for i in range(2):
        bound = np.sqrt(6.0 / dims[i])
        params[f"head{i}.w"] = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i]))
        params[f"head{i}.b"] = np.zeros(dims[i + 1])
    return params


def conv_param_names(plan):
    return tuple(f"conv{i}.{t}" for i in range(len(plan.conv_channels))
                 for t in ("w", "b"))


def encoder_forward(params, x, plan, with_head=True):
    """Run the encoder; returns (output, cache) for the backward pass.

    With `with_head` the output is the projection-head vector; without it,
    the GAP feature vector used by downstream classification.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != plan.in_channels:
        raise ValueError("encoder input shape mismatch")
    cache = {"x": x, "stages": []}
    cur = x
    for i in range(len(plan.conv_channels)):
        pre = conv2d(cur, params[f"conv{i}.w"], params[f"conv{i}.b"])
        act = relu(pre)
        pooled = maxpool2(act)
        cache["stages"].append({"in": cur, "pre": pre, "act": act})
        cur = pooled
    cache["gap_in_shape"] = cur.shape
    cache["gap_in"] = cur
    h = gap(cur)
    cache["h"] = h
    if not with_head:
        return h, cache
    z1 = fully_connected(h, params["head0.w"], params["head0.b"])
    a1 = relu(z1)
    out = fully_connected(a1, params["head1.w"], params["head1.b"])
    cache["z1"] = z1
    cache["a1"] = a1
    return out, cache


def encoder_backward(params, cache, grad_out, plan, with_head=True):
    """Gradients of every encoder parameter given d(loss)/d(output)."""
    grads = {}
    if with_head:
        g, grads["head1.w"], grads["head1.b"] = fully_connected_backward(
            cache["a1"], params["head1.w"], grad_out)
        g = relu_backward(cache["z1"], g)
        g, grads["head0.w"], grads["head0.b"] = fully_connected_backward(
            cache["h"], params["head0.w"], g)
    else:
        g = grad_out
    g = gap_backward(cache["gap_in_shape"], g)
    for i in reversed(range(len(plan.conv_channels))):
        stage = cache["stages"][i]
        g = maxpool2_backward(stage["act"], g)
        g = relu_backward(stage["pre"], g)
        g, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv2d_backward(
            stage["in"], params[f"conv{i}.w"], g)
    return grads


# ---------------------------------------------------------------------------
# checkpoint serialization helpers (format lives in fileio)
# ---------------------------------------------------------------------------

def params_copy(params):
    return {name: value.copy() for name, value in params.items()}


def params_close(a, b, tol=0.0):
    if a.keys() != b.keys():
        return False
    return all(np.allclose(a[k], b[k], rtol=0.0, atol=tol) for k in a)
