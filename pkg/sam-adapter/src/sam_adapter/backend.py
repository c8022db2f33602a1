"""Segment Anything model loading, isolated so everything else stays
importable (and testable) without torch installed."""
import os

CHECKPOINT_ENV = "SAM_CHECKPOINT"

_CHECKPOINT_URLS = {
    "vit_h": "https://dl.fbaipublicfiles.com/segment_anything/sam_vit_h_4b8939.pth",
    "vit_l": "https://dl.fbaipublicfiles.com/segment_anything/sam_vit_l_0b3195.pth",
    "vit_b": "https://dl.fbaipublicfiles.com/segment_anything/sam_vit_b_01ec64.pth",
}


class CheckpointMissing(RuntimeError):
    """Raised when no usable SAM checkpoint can be found."""


def download_instructions(model_type="vit_h"):
    url = _CHECKPOINT_URLS.get(model_type, _CHECKPOINT_URLS["vit_h"])
    return (f"download the {model_type} checkpoint:\n"
            f"    curl -L -o sam_{model_type}.pth {url}\n"
            f"then pass it with --checkpoint or set ${CHECKPOINT_ENV}")


def resolve_checkpoint(explicit=None):
    """--checkpoint flag wins; otherwise the environment variable."""
    path = explicit or os.environ.get(CHECKPOINT_ENV)
    if not path:
        raise CheckpointMissing(
            "no SAM checkpoint given; " + download_instructions())
    if not os.path.isfile(path):
        raise CheckpointMissing(
            f"SAM checkpoint not found: {path}\n" + download_instructions())
    return path


def load_generator(checkpoint, model_type="vit_h"):
    """Build the automatic mask generator (requires the optional deps)."""
    try:
        from segment_anything import (SamAutomaticMaskGenerator,
                                      sam_model_registry)
    except ImportError as e:
        raise CheckpointMissing(
            "segment-anything is not installed; "
            "pip install 'sam-adapter[sam]'") from e
    sam = sam_model_registry[model_type](checkpoint=checkpoint)
    return SamAutomaticMaskGenerator(sam)
