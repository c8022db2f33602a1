"""Vectorized numpy implementations of the hot kernels.

These are the import-time fallback when the compiled extension is not
available. The accumulation order in ``col2im_add`` (kernel row, then
kernel column) and the tie rule in the pooling pair are chosen to match
the compiled versions exactly, so both backends produce bitwise-identical
results.

All tensors are channels-last: (batch, height, width, channels).
"""
import numpy as np


def im2col(x, kh, kw, sh, sw, ph, pw):
    """Gather kernel patches into a (B, Ho, Wo, kh*kw*C) column tensor.

    The last axis is ordered (kernel row, kernel col, channel), row-major,
    so a convolution becomes ``cols.reshape(-1, kh*kw*C) @ W.reshape(kh*kw*C, K)``.
    Out-of-bounds reads are zero (zero padding).
    """
    b, h, w, c = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = x if (ph == 0 and pw == 0) else np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((b, ho, wo, kh * kw * c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw, :]
            cols[:, :, :, (i * kw + j) * c : (i * kw + j + 1) * c] = patch
    return cols


def col2im_add(cols, h, w, kh, kw, sh, sw, ph, pw):
    """Adjoint of im2col: scatter-add columns back onto a (B, H, W, C) grid.

    Contributions that fall in the padding border are discarded.
    """
    b, ho, wo, _ = cols.shape
    c = cols.shape[3] // (kh * kw)
    gp = np.zeros((b, h + 2 * ph, w + 2 * pw, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            gp[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw, :] += cols[
                :, :, :, (i * kw + j) * c : (i * kw + j + 1) * c
            ]
    if ph or pw:
        return np.ascontiguousarray(gp[:, ph : ph + h, pw : pw + w, :])
    return gp


def maxpool2x2_forward(x):
    """Disjoint 2x2 max pooling; ties go to the first window cell in row-major order.

    Returns (pooled, argmax) where argmax holds the within-window index
    0..3 = (0,0), (0,1), (1,0), (1,1) of the winning element.
    """
    v00 = x[:, 0::2, 0::2, :]
    out = v00.copy()
    arg = np.zeros(v00.shape, dtype=np.uint8)
    for k, (i, j) in enumerate(((0, 1), (1, 0), (1, 1)), start=1):
        v = x[:, i::2, j::2, :]
        better = v > out
        out[better] = v[better]
        arg[better] = k
    return out, arg


def maxpool2x2_backward(arg, grad_out):
    """Route each output gradient to the recorded argmax position."""
    b, ho, wo, c = grad_out.shape
    gx = np.zeros((b, 2 * ho, 2 * wo, c), dtype=grad_out.dtype)
    for k in range(4):
        view = gx[:, k // 2 :: 2, k % 2 :: 2, :]
        np.copyto(view, grad_out, where=(arg == k))
    return gx
