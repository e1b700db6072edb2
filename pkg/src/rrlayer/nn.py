"""Layer kernels with hand-written gradients.

Everything is a pure function over NHWC arrays. Convolution is
cross-correlation via window extraction; each output element is one dot
product over the window flattened as (f_h, f_w, c_in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import WindowGrid, as_tensor, extract_windows, fold_windows


@dataclass
class ConvParams:
    kernels: np.ndarray  # (F, F, C_in, C_out)
    bias: np.ndarray  # (C_out,)
    stride: int = 1
    padding: int = 0

    @property
    def grid(self) -> WindowGrid:
        return WindowGrid(self.kernels.shape[0], self.stride, self.padding)


@dataclass
class DenseParams:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_conv(rng, size, c_in, c_out, stride=1, padding=0, dtype=np.float64) -> ConvParams:
    fan_in, fan_out = size * size * c_in, size * size * c_out
    kernels = glorot_uniform(rng, (size, size, c_in, c_out), fan_in, fan_out, dtype)
    return ConvParams(kernels, np.zeros(c_out, dtype=dtype), stride, padding)


def init_dense(rng, n_in, n_out, dtype=np.float64) -> DenseParams:
    return DenseParams(glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), np.zeros(n_out, dtype=dtype))


def _check_conv(x: np.ndarray, p: ConvParams) -> None:
    f, f2, c_in, _ = p.kernels.shape
    if f != f2:
        raise ValueError(f"kernels must be square, got {p.kernels.shape}")
    if x.shape[3] != c_in:
        raise ValueError(f"input has {x.shape[3]} channels, kernels expect {c_in}")
    if p.bias.shape != (p.kernels.shape[3],):
        raise ValueError(f"bias shape {p.bias.shape} does not match kernels {p.kernels.shape}")


def conv_forward(x, p: ConvParams) -> np.ndarray:
    x = as_tensor(x)
    _check_conv(x, p)
    cols = extract_windows(x, p.grid)
    n, oh, ow, f, _, c_in = cols.shape
    c_out = p.kernels.shape[3]
    out = cols.reshape(-1, f * f * c_in) @ p.kernels.reshape(f * f * c_in, c_out) + p.bias
    return out.reshape(n, oh, ow, c_out)


def conv_backward(x, p: ConvParams, grad_out):
    """Return ``(grad_x, ConvParams-shaped grads)`` for a cross-correlation."""
    x = as_tensor(x)
    _check_conv(x, p)
    cols = extract_windows(x, p.grid)
    n, oh, ow, f, _, c_in = cols.shape
    c_out = p.kernels.shape[3]
    if grad_out.shape != (n, oh, ow, c_out):
        raise ValueError(f"grad_out shape {grad_out.shape} != output shape {(n, oh, ow, c_out)}")
    g = grad_out.reshape(-1, c_out)
    flat_cols = cols.reshape(-1, f * f * c_in)
    grad_k = (flat_cols.T @ g).reshape(p.kernels.shape)
    grad_b = g.sum(axis=0)
    grad_cols = (g @ p.kernels.reshape(f * f * c_in, c_out).T).reshape(cols.shape)
    grad_x = fold_windows(grad_cols, p.grid, x.shape)
    return grad_x, ConvParams(grad_k, grad_b, p.stride, p.padding)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def _pool_blocks(x):
    x = as_tensor(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even height and width, got {h}x{w}")
    # (N, H/2, W/2, C, 4) with the block in row-major order
    return x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)


def _unpool_blocks(blocks):
    n, h2, w2, c, _ = blocks.shape
    return blocks.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


def maxpool2_forward(x):
    return _pool_blocks(x).max(axis=-1)


def maxpool2_backward(x, grad_out):
    """Route each gradient to the first maximal cell of its 2x2 block."""
    blocks = _pool_blocks(x)
    if grad_out.shape != blocks.shape[:4]:
        raise ValueError(f"grad_out shape {grad_out.shape} != pooled shape {blocks.shape[:4]}")
    arg = blocks.argmax(axis=-1)
    routed = (np.arange(4) == arg[..., None]) * grad_out[..., None]
    return _unpool_blocks(routed.astype(grad_out.dtype))


def avgpool2_forward(x):
    return _pool_blocks(x).mean(axis=-1)


def avgpool2_backward(x, grad_out):
    blocks = _pool_blocks(x)
    if grad_out.shape != blocks.shape[:4]:
        raise ValueError(f"grad_out shape {grad_out.shape} != pooled shape {blocks.shape[:4]}")
    spread = np.repeat(grad_out[..., None] / 4, 4, axis=-1)
    return _unpool_blocks(spread.astype(grad_out.dtype))


def dense_forward(x, p: DenseParams):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != p.weights.shape[0]:
        raise ValueError(f"dense input shape {x.shape} incompatible with weights {p.weights.shape}")
    return x @ p.weights + p.bias


def dense_backward(x, p: DenseParams, grad_out):
    x = np.asarray(x)
    if grad_out.shape != (x.shape[0], p.weights.shape[1]):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match dense output")
    return grad_out @ p.weights.T, DenseParams(x.T @ grad_out, grad_out.sum(axis=0))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """Plain gradient descent; returns new arrays, inputs are left untouched."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient for {name!r} has shape {np.shape(g)}, expected {np.shape(p)}")
        p = np.asarray(p)
        dtype = p.dtype if np.issubdtype(p.dtype, np.floating) else np.float64
        out[name] = (p - lr * np.asarray(g)).astype(dtype, copy=False)
    return out
