"""Differentiable layer primitives on channels-last numpy tensors.

A "tensor" here is a plain ndarray shaped (H, W, C) or (B, H, W, C);
rank-3 inputs are treated as a batch of one and the batch axis is
stripped again on output. Every operation is a pure function of its
arguments (dropout takes an explicit seeded generator), forward passes
reject non-finite input, and each forward has a hand-written backward.

Gradient conventions: backward functions take the upstream gradient with
the same shape as the forward output and return gradients for each
differentiable input, in input order.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InputError(f"expected a rank-3 or rank-4 tensor, got shape {x.shape}")


def _unbatch(x, squeeze):
    return x[0] if squeeze else x


def _check_finite(x, what):
    if not np.isfinite(x).all():
        raise InputError(f"{what} contains non-finite values")


@dataclass
class ConvParams:
    """Weights of one convolution layer.

    kernels are indexed (kernel row, kernel col, input channel, output
    channel); biases are per output channel. The output shape follows
    out = (in + 2*pad - kernel) / stride + 1 with zero padding.
    """

    kernels: np.ndarray
    biases: np.ndarray
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels)
        self.biases = np.asarray(self.biases)
        if self.kernels.ndim != 4:
            raise InputError(f"kernels must be rank 4 (kh, kw, cin, cout), got shape {self.kernels.shape}")
        if self.biases.shape != (self.kernels.shape[3],):
            raise InputError(
                f"biases shape {self.biases.shape} does not match {self.kernels.shape[3]} output channels"
            )
        self.stride = (int(self.stride[0]), int(self.stride[1]))
        self.padding = (int(self.padding[0]), int(self.padding[1]))

    @property
    def in_channels(self):
        return self.kernels.shape[2]

    @property
    def out_channels(self):
        return self.kernels.shape[3]


def conv_output_size(size, kernel, stride, pad):
    span = size + 2 * pad - kernel
    if span < 0 or span % stride != 0:
        raise InputError(
            f"invalid convolution geometry: size={size} kernel={kernel} stride={stride} pad={pad}"
        )
    return span // stride + 1


def conv2d_forward(x, p):
    """Cross-correlate x with p.kernels and add biases (zero padding)."""
    x4, squeeze = _as_batch(x)
    _check_finite(x4, "conv2d input")
    kh, kw, cin, cout = p.kernels.shape
    if x4.shape[3] != cin:
        raise InputError(f"input has {x4.shape[3]} channels, kernels expect {cin}")
    (sh, sw), (ph, pw) = p.stride, p.padding
    ho = conv_output_size(x4.shape[1], kh, sh, ph)
    wo = conv_output_size(x4.shape[2], kw, sw, pw)
    cols = kernels.im2col(x4, kh, kw, sh, sw, ph, pw)
    out = cols.reshape(-1, kh * kw * cin) @ p.kernels.reshape(kh * kw * cin, cout)
    out += p.biases
    return _unbatch(out.reshape(x4.shape[0], ho, wo, cout), squeeze)


def conv2d_backward(x, p, grad_out):
    """Gradients of conv2d_forward w.r.t. input, kernels and biases."""
    x4, squeeze = _as_batch(x)
    g4, _ = _as_batch(grad_out)
    kh, kw, cin, cout = p.kernels.shape
    (sh, sw), (ph, pw) = p.stride, p.padding
    ho = conv_output_size(x4.shape[1], kh, sh, ph)
    wo = conv_output_size(x4.shape[2], kw, sw, pw)
    if g4.shape != (x4.shape[0], ho, wo, cout):
        raise InputError(f"grad_out shape {g4.shape} does not match forward output {(x4.shape[0], ho, wo, cout)}")
    cols = kernels.im2col(x4, kh, kw, sh, sw, ph, pw)
    gmat = g4.reshape(-1, cout)
    grad_w = (cols.reshape(-1, kh * kw * cin).T @ gmat).reshape(p.kernels.shape)
    grad_b = gmat.sum(axis=0)
    gcols = (gmat @ p.kernels.reshape(kh * kw * cin, cout).T).reshape(cols.shape)
    grad_x = kernels.col2im_add(gcols, x4.shape[1], x4.shape[2], kh, kw, sh, sw, ph, pw)
    return _unbatch(grad_x, squeeze), grad_w, grad_b


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    """Pass gradient where x > 0; the kink at 0 is assigned gradient 0."""
    return np.where(x > 0, grad_out, 0)


def maxpool2x2(x):
    """Halve the spatial dims by disjoint 2x2 max windows.

    Returns (pooled, argmax_indices); the indices feed maxpool2x2_backward.
    """
    x4, squeeze = _as_batch(x)
    if x4.shape[1] % 2 or x4.shape[2] % 2:
        raise InputError(f"max pooling needs even spatial dims, got {x4.shape[1]}x{x4.shape[2]}")
    out, arg = kernels.maxpool2x2_forward(x4)
    return _unbatch(out, squeeze), _unbatch(arg, squeeze)


def maxpool2x2_backward(argmax_indices, grad_out):
    a4, squeeze = _as_batch(argmax_indices)
    g4, _ = _as_batch(grad_out)
    if a4.shape != g4.shape:
        raise InputError(f"argmax shape {a4.shape} does not match grad_out {g4.shape}")
    return _unbatch(kernels.maxpool2x2_backward(a4, g4), squeeze)


def transposed_conv2x2_forward(x, p):
    """Learned 2x upsampling: scatter x[p,q,c]*w[i,j,c,k] to out[2p+i, 2q+j, k].

    Restricted to 2x2 kernels with stride (2, 2) and no cropping, so the
    scatter targets are disjoint and the output exactly doubles the input
    spatially.
    """
    _require_tconv_geometry(p)
    x4, squeeze = _as_batch(x)
    _check_finite(x4, "transposed conv input")
    _, cin, cout = p.kernels.shape[1:]
    if x4.shape[3] != cin:
        raise InputError(f"input has {x4.shape[3]} channels, kernels expect {cin}")
    b, h, w, _ = x4.shape
    out = np.empty((b, 2 * h, 2 * w, cout), dtype=np.result_type(x4, p.kernels))
    for i in range(2):
        for j in range(2):
            out[:, i::2, j::2, :] = x4 @ p.kernels[i, j]
    out += p.biases
    return _unbatch(out, squeeze)


def transposed_conv2x2_backward(x, p, grad_out):
    """Adjoint of the 2x2 scatter: a stride-2 gather with the same kernels."""
    _require_tconv_geometry(p)
    x4, squeeze = _as_batch(x)
    g4, _ = _as_batch(grad_out)
    b, h, w, cin = x4.shape
    cout = p.kernels.shape[3]
    if g4.shape != (b, 2 * h, 2 * w, cout):
        raise InputError(f"grad_out shape {g4.shape} does not match forward output {(b, 2 * h, 2 * w, cout)}")
    grad_x = np.zeros_like(x4)
    grad_w = np.zeros_like(p.kernels)
    xmat = x4.reshape(-1, cin)
    for i in range(2):
        for j in range(2):
            gij = g4[:, i::2, j::2, :]
            grad_x += gij @ p.kernels[i, j].T
            grad_w[i, j] = xmat.T @ gij.reshape(-1, cout)
    grad_b = g4.sum(axis=(0, 1, 2))
    return _unbatch(grad_x, squeeze), grad_w, grad_b


def _require_tconv_geometry(p):
    if p.kernels.shape[:2] != (2, 2) or p.stride != (2, 2) or p.padding != (0, 0):
        raise InputError("transposed convolution supports only 2x2 kernels, stride (2,2), no cropping")


def concat_depth(a, b):
    """Append b's channels after a's; spatial dims must agree."""
    a4, sq_a = _as_batch(a)
    b4, sq_b = _as_batch(b)
    if sq_a != sq_b or a4.shape[:3] != b4.shape[:3]:
        raise InputError(f"cannot concatenate shapes {np.shape(a)} and {np.shape(b)}")
    return _unbatch(np.concatenate([a4, b4], axis=3), sq_a)


def split_depth(grad_out, a_channels):
    """Backward of concat_depth: split the gradient at a_channels."""
    g, squeeze = _as_batch(grad_out)
    if not 0 < a_channels < g.shape[3]:
        raise InputError(f"split point {a_channels} outside 1..{g.shape[3] - 1}")
    return _unbatch(g[..., :a_channels], squeeze), _unbatch(g[..., a_channels:], squeeze)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout.

    In train mode each element is zeroed with probability ``rate`` and
    survivors are scaled by 1/(1-rate), so infer mode is the exact
    identity. Returns (output, mask); the mask (None in infer mode or at
    rate 0) already carries the scaling and is what the backward applies.
    """
    if not 0 <= rate < 1:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise InputError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x)
    if mode == "infer" or rate == 0:
        return x, None
    if rng is None:
        raise InputError("train-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return grad_out if mask is None else grad_out * mask


def softmax_channels(logits):
    """Per-pixel softmax over the channel axis, stabilized by max subtraction."""
    z = np.asarray(logits)
    _check_finite(z, "softmax input")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
