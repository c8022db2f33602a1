"""Corpus ingestion, augmentation, splitting, and minibatch iteration.

Masks use one canonical palette: 0 = Background, 1 = Crack,
2 = Delamination. Loading standardizes every pair to input_size x
input_size (shortest-side resize, then center crop); augmentation applies
one random affine map (rotation, shear, optional reflections) to image
and mask together; the train/validation split groups by source image so
augmented copies never straddle the split.
"""
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from . import imageio
from .errors import ConfigError, IngestError, InputError

CLASS_NAMES = ("background", "crack", "delamination")
NUM_CLASSES = len(CLASS_NAMES)

# fixed salts keep the derived RNG streams for augmentation and dropout
# disjoint even when (seed, index) collide across uses
AUGMENT_SALT = 104729
DROPOUT_SALT = 7919


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (S, S, 3) float32
    mask: np.ndarray   # (S, S) uint8, values < NUM_CLASSES
    source_id: str

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise InputError(f"image {self.image.shape[:2]} and mask {self.mask.shape} disagree "
                             f"for {self.source_id!r}")


@dataclass(frozen=True)
class AugmentSpec:
    rotation_deg: float = 30.0
    shear_deg: float = 15.0
    reflect_horizontal: bool = True
    reflect_vertical: bool = True
    multiplier: int = 2  # total copies per source, original included

    def __post_init__(self):
        if self.rotation_deg < 0 or self.shear_deg < 0:
            raise ConfigError("augmentation ranges must be nonnegative")
        if self.multiplier < 1:
            raise ConfigError(f"multiplier must be >= 1, got {self.multiplier}")

    def to_dict(self):
        return {
            "rotation_deg": self.rotation_deg,
            "shear_deg": self.shear_deg,
            "reflect_horizontal": self.reflect_horizontal,
            "reflect_vertical": self.reflect_vertical,
            "multiplier": self.multiplier,
        }


def _resize_center_crop(array, size, resample):
    """Shortest side to `size` via PIL, then center crop to size x size."""
    h, w = array.shape[:2]
    scale = size / min(h, w)
    nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
    if (nh, nw) != (h, w):
        img = Image.fromarray(array)
        array = np.asarray(img.resize((nw, nh), resample=resample))
    top, left = (nh - size) // 2, (nw - size) // 2
    return array[top:top + size, left:left + size]


def _validate_mask_values(mask, path):
    bad = mask >= NUM_CLASSES
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise IngestError(f"mask {path}: value {mask[r, c]} at pixel (row {r}, col {c}) "
                          f"is not a class index in 0..{NUM_CLASSES - 1}")


def load_corpus(image_dir, mask_dir, size=256):
    """Load image/mask pairs matched by base filename.

    Images come back as float32 in [0, 1], not yet zero-centered;
    normalization belongs to the caller because the channel means must be
    computed on the training split only.
    """
    if not os.path.isdir(image_dir):
        raise IngestError(f"image directory not found: {image_dir}")
    if not os.path.isdir(mask_dir):
        raise IngestError(f"mask directory not found: {mask_dir}")
    names = sorted(n for n in os.listdir(image_dir)
                   if os.path.splitext(n)[1].lower() in imageio.IMAGE_EXTENSIONS)
    if not names:
        raise IngestError(f"no images (png/jpg) found in {image_dir}")
    samples = []
    for name in names:
        stem = os.path.splitext(name)[0]
        mask_path = os.path.join(mask_dir, f"{stem}.png")
        if not os.path.exists(mask_path):
            raise IngestError(f"no mask for image {name}: expected {mask_path}")
        image = imageio.read_image_u8(os.path.join(image_dir, name))
        mask = imageio.read_mask(mask_path)
        _validate_mask_values(mask, mask_path)
        image = _resize_center_crop(image, size, Image.BILINEAR)
        image = image.astype(np.float32) / np.float32(255.0)
        mask = _resize_center_crop(mask, size, Image.NEAREST)
        samples.append(Sample(image, mask, stem))
    return samples


def channel_means(samples):
    """Per-channel mean over every pixel of the given samples (float32)."""
    if not samples:
        raise IngestError("cannot compute channel means of an empty sample list")
    total = np.zeros(samples[0].image.shape[-1], dtype=np.float64)
    count = 0
    for s in samples:
        total += s.image.reshape(-1, s.image.shape[-1]).sum(axis=0, dtype=np.float64)
        count += s.image.shape[0] * s.image.shape[1]
    return (total / count).astype(np.float32)


def zero_center(samples, means):
    m = np.asarray(means, dtype=np.float32)
    return [replace(s, image=s.image - m) for s in samples]


def one_hot(mask, num_classes=NUM_CLASSES, dtype=np.float32):
    m = np.asarray(mask)
    if m.min() < 0 or m.max() >= num_classes:
        raise InputError(f"mask values outside 0..{num_classes - 1}")
    return np.eye(num_classes, dtype=dtype)[m]


def _affine_matrix(theta_deg, shear_deg, flip_h, flip_v):
    """Forward map (row, col) offsets from center: rotate(shear(flip(x)))."""
    t = math.radians(theta_deg)
    s = math.tan(math.radians(shear_deg))
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, s], [0.0, 1.0]])
    flip = np.diag([-1.0 if flip_v else 1.0, -1.0 if flip_h else 1.0])
    return rot @ shear @ flip


def _warp(image, mask, matrix):
    """Apply the forward affine `matrix` about the center to both planes.

    The image is sampled bilinearly with out-of-frame fill equal to its
    per-channel mean; the mask uses nearest-neighbor with Background fill.
    """
    h, w = mask.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    inv = np.linalg.inv(matrix)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dst = np.stack([rows.ravel(), cols.ravel()], axis=0).astype(np.float64)
    src = inv @ (dst - center[:, None]) + center[:, None]
    sr, sc = src[0], src[1]

    # nearest-neighbor lookup for the mask
    nr, nc = np.rint(sr).astype(np.int64), np.rint(sc).astype(np.int64)
    inside_n = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    out_mask = np.zeros(h * w, dtype=mask.dtype)  # Background fill
    out_mask[inside_n] = mask[nr[inside_n], nc[inside_n]]

    # bilinear lookup for the image; the interpolation cell is clamped at
    # the frame edge so exact-boundary coordinates read the edge pixel
    fill = image.reshape(-1, image.shape[-1]).mean(axis=0, dtype=np.float64)
    out_img = np.empty((h * w, image.shape[-1]), dtype=np.float64)
    out_img[:] = fill
    inside_b = (sr >= 0) & (sr <= h - 1) & (sc >= 0) & (sc <= w - 1)
    ib = np.flatnonzero(inside_b)
    r0b = np.clip(np.floor(sr[ib]).astype(np.int64), 0, max(h - 2, 0))
    c0b = np.clip(np.floor(sc[ib]).astype(np.int64), 0, max(w - 2, 0))
    frb = (sr[ib] - r0b)[:, None]
    fcb = (sc[ib] - c0b)[:, None]
    img64 = image.astype(np.float64)
    out_img[ib] = ((1 - frb) * (1 - fcb) * img64[r0b, c0b]
                   + (1 - frb) * fcb * img64[r0b, c0b + 1]
                   + frb * (1 - fcb) * img64[r0b + 1, c0b]
                   + frb * fcb * img64[r0b + 1, c0b + 1])
    return (out_img.reshape(image.shape).astype(image.dtype),
            out_mask.reshape(mask.shape))


def augment(sample, spec, rng):
    """One randomized affine copy of `sample` (same source_id)."""
    theta = rng.uniform(-spec.rotation_deg, spec.rotation_deg) if spec.rotation_deg else 0.0
    shear = rng.uniform(-spec.shear_deg, spec.shear_deg) if spec.shear_deg else 0.0
    flip_h = spec.reflect_horizontal and bool(rng.integers(0, 2))
    flip_v = spec.reflect_vertical and bool(rng.integers(0, 2))
    matrix = _affine_matrix(theta, shear, flip_h, flip_v)
    if np.array_equal(matrix, np.eye(2)):
        return sample
    image, mask = _warp(sample.image, sample.mask, matrix)
    return Sample(image, mask, sample.source_id)


def expand_with_augmentation(samples, spec, seed):
    """Each source yields the original plus multiplier - 1 augmented copies.

    Copy k of source index i draws from an RNG seeded by
    (seed, AUGMENT_SALT, i, k), so the corpus is a pure function of
    (corpus bytes, spec, seed) regardless of iteration order.
    """
    out = []
    for i, s in enumerate(samples):
        out.append(s)
        for k in range(1, spec.multiplier):
            rng = np.random.default_rng([seed, AUGMENT_SALT, i, k])
            out.append(augment(s, spec, rng))
    return out


def split(samples, fraction=0.8, seed=0):
    """Deterministic train/validation partition grouped by source_id."""
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    if not samples:
        raise IngestError("cannot split an empty corpus")
    sources = sorted({s.source_id for s in samples})
    order = np.random.default_rng([seed, 3]).permutation(len(sources))
    n_train = int(len(sources) * fraction)
    train_ids = {sources[i] for i in order[:n_train]}
    train = [s for s in samples if s.source_id in train_ids]
    val = [s for s in samples if s.source_id not in train_ids]
    return train, val


def minibatches(samples, batch_size=32, seed=0, epoch=0):
    """Yield (images, one-hot labels) batches in a per-epoch shuffled order.

    The final short batch is kept. Order depends only on (seed, epoch).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    perm = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        idx = perm[start:start + batch_size]
        images = np.stack([samples[i].image for i in idx])
        labels = np.stack([one_hot(samples[i].mask) for i in idx])
        yield images, labels
