"""Differentiable layer kernels for the 1-D convolutional skill classifier.

Activations are plain numpy arrays laid out as ``(batch, length, channels)``:
batch-major, time next, channels last.  Every forward kernel has a matching
backward kernel that returns exact reverse-mode gradients of the forward map.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InternalStateError


def check_tensor3(x, name="input"):
    x = np.asarray(x)
    if x.ndim != 3:
        raise ConfigurationError(f"{name}: expected a (batch, length, channels) array, got shape {x.shape}")
    return x


@dataclass
class ConvLayerParams:
    """Kernels ``(out_channels, kernel_width, in_channels)`` and biases ``(out_channels,)``.

    Convolution is always stride 1 with no padding.
    """

    kernels: np.ndarray
    biases: np.ndarray
    name: str = "conv"

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    @property
    def kernel_width(self):
        return self.kernels.shape[1]

    @property
    def in_channels(self):
        return self.kernels.shape[2]

    stride = 1


@dataclass
class DenseLayerParams:
    weights: np.ndarray  # (in_features, out_features)
    biases: np.ndarray
    name: str = "dense"

    @property
    def in_features(self):
        return self.weights.shape[0]

    @property
    def out_features(self):
        return self.weights.shape[1]


@dataclass
class PoolSpec:
    """Max-pool geometry plus the argmax memo written by the forward pass."""

    size: int = 2
    stride: int = 2
    argmax_memo: np.ndarray = None
    input_shape: tuple = None


def _unfold(x, width):
    # (B, L, C) -> (B, L - width + 1, width * C), tap-major then channel
    n = x.shape[1] - width + 1
    return np.concatenate([x[:, k:k + n, :] for k in range(width)], axis=2)


def conv1d_forward(x, params):
    """Valid 1-D convolution, stride 1.

    ``out[b, t, o] = bias[o] + sum_{k, c} x[b, t + k, c] * kernels[o, k, c]``
    """
    x = check_tensor3(x)
    o, k, c = params.kernels.shape
    if x.shape[2] != c:
        raise ConfigurationError(
            f"{params.name}: input has {x.shape[2]} channels, layer expects {c}")
    if x.shape[1] < k:
        raise ConfigurationError(
            f"{params.name}: input length {x.shape[1]} shorter than kernel width {k}")
    if params.biases.shape != (o,):
        raise ConfigurationError(f"{params.name}: bias shape {params.biases.shape} != ({o},)")
    cols = _unfold(x, k)
    return cols @ params.kernels.reshape(o, k * c).T + params.biases


def conv1d_backward(grad_out, x, params):
    """Return ``(grad_input, ConvLayerParams of gradients)`` for :func:`conv1d_forward`."""
    x = check_tensor3(x)
    grad_out = check_tensor3(grad_out, "grad_out")
    o, k, c = params.kernels.shape
    n = x.shape[1] - k + 1
    if grad_out.shape != (x.shape[0], n, o):
        raise ConfigurationError(
            f"{params.name}: grad_out shape {grad_out.shape} != forward output {(x.shape[0], n, o)}")
    cols = _unfold(x, k)
    g2 = grad_out.reshape(-1, o)
    grad_w = g2.T @ cols.reshape(-1, k * c)
    grad_b = g2.sum(axis=0)
    grad_cols = grad_out @ params.kernels.reshape(o, k * c)
    grad_x = np.zeros_like(x, dtype=grad_cols.dtype)
    for tap in range(k):
        grad_x[:, tap:tap + n, :] += grad_cols[:, :, tap * c:(tap + 1) * c]
    return grad_x, ConvLayerParams(grad_w.reshape(o, k, c), grad_b, params.name)


def maxpool_forward(x, spec):
    """Non-overlapping max-pool along time; a trailing odd step is dropped.

    Ties go to the earlier time index. Fills ``spec.argmax_memo``.
    """
    x = check_tensor3(x)
    if spec.size != 2 or spec.stride != 2:
        raise ConfigurationError("max-pool supports size 2, stride 2 only")
    b, length, c = x.shape
    if length < 2:
        raise ConfigurationError(f"max-pool input length {length} < 2")
    n = length // 2
    patches = x[:, :2 * n, :].reshape(b, n, 2, c)
    memo = np.argmax(patches, axis=2)
    spec.argmax_memo = memo
    spec.input_shape = x.shape
    return np.take_along_axis(patches, memo[:, :, None, :], axis=2)[:, :, 0, :]


def maxpool_backward(grad_out, spec):
    """Route each upstream gradient to the position that won the forward max."""
    memo = spec.argmax_memo
    if memo is None or spec.input_shape is None:
        raise InternalStateError("max-pool backward called without a forward memo")
    grad_out = check_tensor3(grad_out, "grad_out")
    if grad_out.shape != memo.shape:
        raise InternalStateError(
            f"max-pool memo shape {memo.shape} does not match grad_out {grad_out.shape}")
    b, length, c = spec.input_shape
    n = memo.shape[1]
    patches = np.zeros((b, n, 2, c), dtype=grad_out.dtype)
    np.put_along_axis(patches, memo[:, :, None, :], grad_out[:, :, None, :], axis=2)
    grad_x = np.zeros((b, length, c), dtype=grad_out.dtype)
    grad_x[:, :2 * n, :] = patches.reshape(b, 2 * n, c)
    return grad_x


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    # subgradient 0 at x == 0
    return np.where(x > 0, grad_out, 0)


def dense_forward(x, params):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.in_features:
        raise ConfigurationError(
            f"{params.name}: input shape {x.shape} incompatible with {params.in_features} input features")
    return x @ params.weights + params.biases


def dense_backward(grad_out, x, params):
    """Return ``(grad_input, DenseLayerParams of gradients)``."""
    if grad_out.shape != (x.shape[0], params.out_features):
        raise ConfigurationError(f"{params.name}: grad_out shape {grad_out.shape} mismatch")
    grad_x = grad_out @ params.weights.T
    return grad_x, DenseLayerParams(x.T @ grad_out, grad_out.sum(axis=0), params.name)


def softmax(logits):
    """Row-wise softmax with max subtraction; accepts a vector or a (batch, classes) matrix."""
    z = np.asarray(logits)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
