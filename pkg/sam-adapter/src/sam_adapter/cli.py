"""``sam-adapter export``: run automatic mask generation over a directory
and write the interchange manifest for ``crackseg compare``."""
import argparse
import os
import sys

from . import backend, export


def build_parser():
    p = argparse.ArgumentParser(
        prog="sam-adapter",
        description="Export Segment Anything masks in the crackseg "
                    "interchange format.")
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("export", help="run automatic mask generation over "
                                      "an image directory")
    e.add_argument("--images", required=True, help="directory of input images")
    e.add_argument("--out", required=True, help="output directory for masks "
                                                "and manifest.json")
    e.add_argument("--checkpoint",
                   help=f"SAM checkpoint path (default ${backend.CHECKPOINT_ENV})")
    e.add_argument("--model-type", default="vit_h",
                   choices=("vit_h", "vit_l", "vit_b"),
                   help="SAM backbone matching the checkpoint")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        checkpoint = backend.resolve_checkpoint(args.checkpoint)
        generator = backend.load_generator(checkpoint, args.model_type)
    except backend.CheckpointMissing as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    source = f"segment-anything/{args.model_type}:{os.path.basename(checkpoint)}"
    try:
        manifest = export.run_export(args.images, args.out, generator, source)
    except NotADirectoryError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    n_masks = sum(len(img["masks"]) for img in manifest["images"])
    print(f"wrote {n_masks} masks for {len(manifest['images'])} images "
          f"to {args.out}")
    for warning in manifest["errors"]:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
