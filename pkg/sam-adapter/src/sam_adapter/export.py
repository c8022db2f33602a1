"""Core export loop: images in, binary mask PNGs + interchange manifest out.

The manifest follows the strict schema of ``crackseg compare``:

    {"source": str,
     "images": [{"id": str, "masks": [{"path", "score", "class_hint"}]}],
     "errors": [str]}

Masks are written as 8-bit PNGs (0 outside, 255 inside) named
``<stem>.<k>.png`` relative to the manifest. The adapter is class-agnostic,
so every mask is hinted ``crack-candidate``; mapping candidates onto the
crack class is the consumer's ``--select`` rule. Extra per-mask metadata
the schema has no field for (bounding box, pixel area) goes to a sidecar
``masks_meta.json`` so the manifest itself stays strictly conformant.
"""
import json
import os

import numpy as np
from PIL import Image

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def _list_images(directory):
    if not os.path.isdir(directory):
        raise NotADirectoryError(f"image directory not found: {directory}")
    return sorted(n for n in os.listdir(directory)
                  if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS)


def _read_rgb(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _write_binary_mask(path, segmentation):
    seg = np.asarray(segmentation)
    out = np.where(seg, 255, 0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def run_export(images_dir, out_dir, generator, source):
    """Run ``generator.generate(rgb_array)`` over every image in
    ``images_dir`` and write masks + ``manifest.json`` to ``out_dir``.

    ``generator`` must return a list of dicts per image with at least a
    boolean ``segmentation`` array and a float quality score under
    ``predicted_iou`` (the Segment Anything convention); ``bbox`` and
    ``area`` are recorded in the sidecar when present.

    Unreadable images are skipped and noted in the manifest ``errors``
    list. Returns the manifest dict.
    """
    names = _list_images(images_dir)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    errors = []
    meta = {}
    for name in names:
        stem = os.path.splitext(name)[0]
        try:
            rgb = _read_rgb(os.path.join(images_dir, name))
        except Exception as e:  # corrupt or truncated file: skip, keep going
            errors.append(f"{name}: unreadable image ({e})")
            continue
        masks = []
        for k, record in enumerate(generator.generate(rgb)):
            mask_name = f"{stem}.{k}.png"
            _write_binary_mask(os.path.join(out_dir, mask_name),
                               record["segmentation"])
            masks.append({
                "path": mask_name,
                "score": float(record.get("predicted_iou", 0.0)),
                "class_hint": "crack-candidate",
            })
            extra = {key: record[key] for key in ("bbox", "area")
                     if key in record}
            if extra:
                meta[mask_name] = {k2: (list(v) if isinstance(v, (tuple, np.ndarray))
                                        else v) for k2, v in extra.items()}
        entries.append({"id": stem, "masks": masks})

    manifest = {"source": source, "images": entries, "errors": errors}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    if meta:
        with open(os.path.join(out_dir, "masks_meta.json"), "w",
                  encoding="utf-8") as f:
            json.dump(meta, f, indent=2)
            f.write("\n")
    return manifest
