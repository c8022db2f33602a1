"""Image file handling: RGB inputs, 8-bit class masks, PFM float maps.

PFM ("portable float map") files carry one float32 plane: header ``Pf``,
``<width> <height>``, a scale line whose sign encodes endianness
(negative = little-endian, the only variant written here), then rows
bottom-up. Used to persist crack-probability maps losslessly.
"""
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def read_image_u8(path):
    """Decode an RGB image to uint8 (H, W, 3)."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise IngestError(f"cannot read image {path}: {e}") from e


def read_image(path):
    """Decode an RGB image to float32 (H, W, 3) in [0, 1]."""
    return read_image_u8(path).astype(np.float32) / np.float32(255.0)


def read_mask(path):
    """Decode a single-channel 8-bit class mask to uint8 (H, W).

    Palette images are read as raw palette indices, which is how labeling
    tools commonly store small class counts.
    """
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "1"):
                raise IngestError(f"mask {path} must be 8-bit single-channel PNG, got mode {img.mode!r}")
            if img.mode == "1":
                img = img.convert("L")
            return np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise IngestError(f"cannot read mask {path}: {e}") from e


def write_mask(path, classes):
    a = np.asarray(classes)
    if a.ndim != 2:
        raise IngestError(f"mask must be 2-D, got shape {a.shape}")
    Image.fromarray(a.astype(np.uint8), mode="L").save(path, format="PNG")


def write_gray_png(path, values):
    """Visualize a [0, 1] float map as an 8-bit PNG scaled 0 -> 255."""
    a = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(a * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


def write_pfm(path, values):
    a = np.asarray(values, dtype=np.float32)
    if a.ndim != 2:
        raise IngestError(f"PFM payload must be 2-D, got shape {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(a).astype("<f4").tobytes())


def write_roc_csv(path, thresholds, fpr, tpr):
    with open(path, "w", encoding="utf-8") as f:
        f.write("threshold,fpr,tpr\n")
        for t, x, y in zip(thresholds, fpr, tpr):
            f.write(f"{t!r},{x!r},{y!r}\n")


def read_pfm(path):
    """Read a grayscale PFM back to float32 (H, W)."""
    if not os.path.exists(path):
        raise IngestError(f"PFM file not found: {path}")
    with open(path, "rb") as f:
        data = f.read()

    # header = three whitespace-terminated token groups
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end > pos:
            tokens.append(data[pos:end])
        pos = end + 1
    if len(tokens) < 4 or tokens[0] != b"Pf":
        raise IngestError(f"{path}: not a grayscale PFM file")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as e:
        raise IngestError(f"{path}: malformed PFM header") from e
    dtype = "<f4" if scale < 0 else ">f4"
    payload = data[pos:]
    if len(payload) != 4 * w * h:
        raise IngestError(f"{path}: PFM payload is {len(payload)} bytes, expected {4 * w * h}")
    plane = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return np.flipud(plane).astype(np.float32)
