"""Class-imbalance weighting and the training losses.

Median-frequency balancing is the default weighting scheme: with
frequency_i = (pixels of class i) / (total pixels of images containing
class i), the weight is alpha_i = median(frequency) / frequency_i, so the
median-frequency class gets weight 1 and rare classes are boosted. The
literal inverse-max scheme alpha_i = max(M) / M_i over raw pixel counts
is available as an alternative.
"""
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, InputError

SCHEMES = ("median-frequency", "inverse-max")

_CLAMP = 1e-7  # probability clamp for BCE and smoothing epsilon for Dice


@dataclass(frozen=True)
class ClassWeights:
    alpha: np.ndarray
    pixel_counts: np.ndarray  # None when built from frequencies alone
    frequencies: np.ndarray
    scheme: str

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        if a.ndim != 1 or not np.all(a > 0) or not np.all(np.isfinite(a)):
            raise ConfigError("class weights must be a vector of positive finite values")
        object.__setattr__(self, "alpha", a)

    @property
    def num_classes(self):
        return self.alpha.shape[0]

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "pixel_counts": None if self.pixel_counts is None else np.asarray(self.pixel_counts).tolist(),
            "frequencies": None if self.frequencies is None else np.asarray(self.frequencies).tolist(),
            "scheme": self.scheme,
        }


def _check_counts(counts, what, class_names):
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or c.size < 2:
        raise ConfigError(f"{what} must be a per-class vector")
    if np.any(c < 0):
        raise ConfigError(f"{what} must be nonnegative")
    zero = np.flatnonzero(c == 0)
    if zero.size:
        names = ", ".join(class_names[i] if class_names is not None else f"class {i}"
                          for i in zero)
        raise ConfigError(f"{names}: zero pixels in {what}; weights are undefined")
    return c


def class_weights(pixel_counts, per_image_presence=None, scheme="median-frequency", class_names=None):
    """Compute per-class loss weights from pixel statistics.

    ``per_image_presence[i]`` is the total pixel count of the images that
    contain class i (the frequency denominator); callers without per-image
    data may pass the global total for every class, or None to reuse
    pixel_counts' sum.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    counts = _check_counts(pixel_counts, "pixel counts", class_names)
    if per_image_presence is None:
        presence = np.full_like(counts, counts.sum())
    else:
        presence = _check_counts(per_image_presence, "per-image presence totals", class_names)
        if presence.shape != counts.shape:
            raise ConfigError("per-image presence totals must match pixel counts in length")
    freq = counts / presence
    if scheme == "median-frequency":
        alpha = np.median(freq) / freq
    else:
        alpha = counts.max() / counts
    return ClassWeights(alpha, counts, freq, scheme)


def weights_from_frequencies(frequencies, scheme="median-frequency", class_names=None):
    """Build ClassWeights directly from already-computed class frequencies."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown weighting scheme {scheme!r}; expected one of {SCHEMES}")
    freq = _check_counts(frequencies, "frequencies", class_names)
    if scheme == "median-frequency":
        alpha = np.median(freq) / freq
    else:
        alpha = freq.max() / freq
    return ClassWeights(alpha, None, freq, scheme)


@dataclass(frozen=True)
class LossValue:
    value: float
    per_pixel: np.ndarray = None  # (B, H, W) map when the loss is per-pixel

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise InputError(f"loss must be finite and nonnegative, got {self.value}")


def _alpha_vector(weights, num_classes, dtype):
    a = weights.alpha if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    if a.shape != (num_classes,):
        raise InputError(f"weights have {a.shape[0]} classes, logits have {num_classes}")
    return a.astype(dtype)


def _check_one_hot(labels):
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=-1) == 1)):
        raise InputError("labels must be one-hot per pixel")


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(logits, labels, weights):
    """Per-pixel weighted CE, averaged over pixels and batch.

    loss = -(alpha * y) . log softmax(z) per pixel. Returns (LossValue,
    grad wrt logits); at alpha = 1 the gradient is exactly
    softmax(z) - y, scaled by the 1/(pixel count) averaging factor.
    """
    z, squeeze = ops._as_batch(logits)
    y, sq_y = ops._as_batch(labels)
    if z.shape != y.shape or squeeze != sq_y:
        raise InputError(f"logits shape {np.shape(logits)} != labels shape {np.shape(labels)}")
    _check_one_hot(y)
    alpha = _alpha_vector(weights, z.shape[-1], z.dtype)

    logp = _log_softmax(z)
    ay = alpha * y
    per_pixel = -(ay * logp).sum(axis=-1)
    n = per_pixel.size
    loss = LossValue(float(per_pixel.mean(dtype=np.float64)), per_pixel)

    # d/dz of -(alpha*y).log softmax(z) = (alpha.y) softmax(z) - alpha*y
    s = np.exp(logp)
    grad = (ay.sum(axis=-1, keepdims=True) * s - ay) / z.dtype.type(n)
    return loss, ops._unbatch(grad, squeeze)


def bce_loss(truth, pred):
    """Binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise InputError(f"truth shape {t.shape} != prediction shape {p.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise InputError("truth values must be 0 or 1")
    if np.any(p < 0) or np.any(p > 1):
        raise InputError("predictions must be probabilities in [0, 1]")
    p = np.clip(p, _CLAMP, 1.0 - _CLAMP)
    return LossValue(float(-(t * np.log(p) + (1 - t) * np.log1p(-p)).mean()))


def dice(truth, pred):
    """Dice coefficient (2|T.P| + eps)/(|T| + |P| + eps); empty-empty gives 1."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise InputError(f"truth shape {t.shape} != prediction shape {p.shape}")
    if np.any(t < 0) or np.any(t > 1) or np.any(p < 0) or np.any(p > 1):
        raise InputError("dice inputs must lie in [0, 1]")
    return float((2.0 * (t * p).sum() + _CLAMP) / (t.sum() + p.sum() + _CLAMP))


def dice_loss(truth, pred):
    return LossValue(1.0 - dice(truth, pred))


def dice_loss_on_logits(logits, labels):
    """Trainable Dice objective: 1 - mean-over-classes DC(softmax, one-hot).

    Same (LossValue, grad_logits) interface as weighted_cross_entropy so
    the training loop can switch objectives. The gradient is analytic,
    chained through the per-class Dice quotient and the softmax.
    """
    z, squeeze = ops._as_batch(logits)
    y, sq_y = ops._as_batch(labels)
    if z.shape != y.shape or squeeze != sq_y:
        raise InputError(f"logits shape {np.shape(logits)} != labels shape {np.shape(labels)}")
    _check_one_hot(y)

    s = ops.softmax_channels(z)
    axes = (0, 1, 2)
    inter = (y * s).sum(axis=axes)
    denom = y.sum(axis=axes) + s.sum(axis=axes) + _CLAMP
    dc = (2.0 * inter + _CLAMP) / denom
    nc = z.shape[-1]
    loss = LossValue(float(1.0 - dc.mean(dtype=np.float64)))

    # dDC_c/dP = (2 T denom - (2 inter + eps)) / denom^2; dLoss/dP = -mean_c
    g_s = -(2.0 * y * denom - (2.0 * inter + _CLAMP)) / (denom * denom) / nc
    g_s = g_s.astype(z.dtype)
    # softmax backward: dL/dz = s * (g - sum_k g_k s_k)
    grad = s * (g_s - (g_s * s).sum(axis=-1, keepdims=True))
    return loss, ops._unbatch(grad, squeeze)
