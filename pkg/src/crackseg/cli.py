"""Batch command-line surface.

Subcommands: ``train`` (config-driven; writes model.cseg, state.cseg,
trainlog.csv, summary.json), ``infer`` (masks + optional probability and
crack maps), ``eval`` (JSON report + ROC CSV), ``weights`` (class-weight
JSON from a mask directory), and ``compare`` (engine vs external masks
from an interchange manifest).

Exit codes: 0 success, 2 configuration error, 3 ingestion/evaluation
error, 4 training error, 5 checkpoint error. Config files are strict
JSON: unknown keys are rejected by their full path (e.g.
``train.leanring_rate``).
"""
import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from . import checkpoint, data, evaluate, imageio, losses, model, ops, train
from .errors import ConfigError, CrackSegError, IngestError

_TRAIN_KEY_MAP = {"learning_rate": "eta"}  # config-file name -> TrainConfig field
_MODEL_KEYS = ("input_size", "input_channels", "num_classes", "base_filters",
               "depth", "dropout_rate", "dropout_stages")
_TRAIN_KEYS = ("max_epochs", "batch_size", "learning_rate", "loss", "weight_scheme",
               "patience", "seed", "constant_eta", "split_fraction", "target_train_acc")
_AUGMENT_KEYS = ("rotation_deg", "shear_deg", "reflect_horizontal",
                 "reflect_vertical", "multiplier")
_DATA_KEYS = ("images", "masks")
_TOP_KEYS = ("model", "train", "augment", "data", "out")

_SCHEME_FLAGS = {"median": "median-frequency", "invmax": "inverse-max"}


def _check_keys(section, allowed, prefix):
    if not isinstance(section, dict):
        raise ConfigError(f"config section {prefix or 'top level'} must be a JSON object")
    for key in section:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown config key: {path}")


def _build(cls, kwargs, section_name):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section_name} config: {e}") from e


def parse_cli_config(path):
    """Strictly parse the JSON run config into typed sections."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    _check_keys(raw, _TOP_KEYS, "")

    _check_keys(raw.get("model", {}), _MODEL_KEYS, "model")
    model_kwargs = dict(raw.get("model", {}))
    if model_kwargs.get("dropout_stages") is not None:
        if not isinstance(model_kwargs["dropout_stages"], list):
            raise ConfigError("model.dropout_stages must be a list of stage names")
        model_kwargs["dropout_stages"] = frozenset(model_kwargs["dropout_stages"])
    model_cfg = _build(model.UNetConfig, model_kwargs, "model")

    _check_keys(raw.get("train", {}), _TRAIN_KEYS, "train")
    train_kwargs = {_TRAIN_KEY_MAP.get(k, k): v for k, v in raw.get("train", {}).items()}
    train_cfg = _build(train.TrainConfig, train_kwargs, "train")

    augment_cfg = None
    if raw.get("augment") is not None:
        _check_keys(raw["augment"], _AUGMENT_KEYS, "augment")
        augment_cfg = _build(data.AugmentSpec, raw["augment"], "augment")

    data_section = raw.get("data")
    paths = None
    if data_section is not None:
        _check_keys(data_section, _DATA_KEYS, "data")
        for key in _DATA_KEYS:
            if key not in data_section:
                raise ConfigError(f"missing config key: data.{key}")
        paths = (data_section["images"], data_section["masks"])

    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("config key out must be a string path")
    return model_cfg, train_cfg, augment_cfg, paths, out


def _list_images(directory, what):
    if not os.path.isdir(directory):
        raise IngestError(f"{what} directory not found: {directory}")
    names = sorted(n for n in os.listdir(directory)
                   if os.path.splitext(n)[1].lower() in imageio.IMAGE_EXTENSIONS)
    if not names:
        raise IngestError(f"no images found in {what} directory {directory}")
    return names


def _cmd_train(args):
    model_cfg, train_cfg, augment_cfg, paths, cfg_out = parse_cli_config(args.config)
    out_dir = args.out or cfg_out
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set config key 'out'")
    if paths is None:
        raise ConfigError("missing config section: data (needs data.images and data.masks)")
    corpus = data.load_corpus(paths[0], paths[1], size=model_cfg.input_size)
    if augment_cfg is not None:
        corpus = data.expand_with_augmentation(corpus, augment_cfg, train_cfg.seed)
    if args.resume:
        params, log = train.resume(args.resume, corpus, train_config=train_cfg,
                                   model_config=model_cfg, out_dir=out_dir)
    else:
        params, log = train.train(corpus, model_cfg, train_cfg, out_dir=out_dir)
    s = log.summary()
    print(f"trained {s['epochs_run']} epochs ({s['stop_reason']}); "
          f"best epoch {s['best_epoch']}; artifacts in {out_dir}")
    return 0


def _load_input_for_model(path, params, means):
    u8 = imageio.read_image_u8(path)
    size = params.config.input_size
    arr = data._resize_center_crop(u8, size, Image.BILINEAR)
    return arr.astype(np.float32) / np.float32(255.0) - means


def _cmd_infer(args):
    params, means, _record = checkpoint.load_model(args.model)
    names = _list_images(args.input, "input")
    os.makedirs(args.out, exist_ok=True)
    for name in names:
        stem = os.path.splitext(name)[0]
        x = _load_input_for_model(os.path.join(args.input, name), params, means)
        logits, _ = model.forward(params, x, mode="infer")
        probs = ops.softmax_channels(logits)
        classes = evaluate.classify(probs)
        imageio.write_mask(os.path.join(args.out, f"{stem}.png"), classes)
        if args.prob_maps:
            for c in range(probs.shape[-1]):
                imageio.write_pfm(os.path.join(args.out, f"{stem}.prob{c}.pfm"), probs[..., c])
        if args.crackmap_n:
            binary = (classes != 1).astype(np.uint8)  # crack pixels -> 0
            cm = evaluate.crack_probability_map(binary, args.crackmap_n)
            imageio.write_pfm(os.path.join(args.out, f"{stem}.crackmap.pfm"), cm.p)
            imageio.write_gray_png(os.path.join(args.out, f"{stem}.crackmap.png"), cm.p)
    print(f"wrote masks for {len(names)} images to {args.out}")
    return 0


def _read_class_mask(path):
    m = imageio.read_mask(path)
    data._validate_mask_values(m, path)
    return m


def _cmd_eval(args):
    truth_names = _list_images(args.truth, "truth")
    stems = [os.path.splitext(n)[0] for n in truth_names]
    preds, truths, scores = [], [], None
    for name, stem in zip(truth_names, stems):
        pred_path = os.path.join(args.pred, f"{stem}.png")
        if not os.path.exists(pred_path):
            raise IngestError(f"no prediction for {name}: expected {pred_path}")
        preds.append(_read_class_mask(pred_path))
        truths.append(_read_class_mask(os.path.join(args.truth, name)))
    if args.scores:
        scores = []
        for stem in stems:
            score_path = os.path.join(args.scores, f"{stem}.pfm")
            if not os.path.exists(score_path):
                raise IngestError(f"no score map for {stem}: expected {score_path}")
            scores.append(imageio.read_pfm(score_path))
    else:
        scores = [(p == 1).astype(np.float64) for p in preds]

    report = evaluate.evaluate_corpus(preds, truths, crack_scores=scores, ids=stems)
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    if args.roc:
        truth_all = np.concatenate([(t == 1).ravel() for t in truths]).astype(int)
        score_all = np.concatenate([np.asarray(s).ravel() for s in scores])
        curve, _ = evaluate.roc_and_auc(score_all, truth_all)
        imageio.write_roc_csv(args.roc, curve.thresholds, curve.fpr, curve.tpr)
    agg = report["aggregate"]
    print(f"aggregate accuracy {agg['accuracy']:.4f}  aggregate AUC {agg['auc']}")
    return 0


def _cmd_weights(args):
    if not os.path.isdir(args.masks):
        raise IngestError(f"mask directory not found: {args.masks}")
    names = sorted(n for n in os.listdir(args.masks) if n.lower().endswith(".png"))
    if not names:
        raise IngestError(f"no mask PNGs found in {args.masks}")
    counts = np.zeros(data.NUM_CLASSES, dtype=np.float64)
    presence = np.zeros(data.NUM_CLASSES, dtype=np.float64)
    for name in names:
        m = _read_class_mask(os.path.join(args.masks, name))
        binc = np.bincount(m.ravel(), minlength=data.NUM_CLASSES)
        counts += binc
        presence += np.where(binc > 0, m.size, 0)
    weights = losses.class_weights(counts, presence, _SCHEME_FLAGS[args.scheme],
                                   class_names=data.CLASS_NAMES)
    out = {"classes": list(data.CLASS_NAMES), **weights.to_dict(),
           "per_image_presence": presence.tolist(),
           "frequency_denominator": "pixels of images containing the class"}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


# Class-agnostic mask sources hint "crack-candidate"; compare maps it to crack.
_CLASS_HINTS = frozenset(data.CLASS_NAMES) | {"crack-candidate"}


def _manifest_error(field, message):
    raise IngestError(f"manifest schema violation at {field}: {message}")


def _check_manifest_keys(obj, allowed, field):
    for key in obj:
        if key not in allowed:
            _manifest_error(f"{field}.{key}" if field else key, "unknown field")


def load_manifest(path):
    """Parse + strictly validate the external-mask interchange manifest."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            m = json.load(f)
    except OSError as e:
        raise IngestError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise IngestError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(m, dict):
        _manifest_error("(root)", "must be a JSON object")
    _check_manifest_keys(m, ("source", "images", "errors"), "")
    if not isinstance(m.get("source"), str):
        _manifest_error("source", "required string")
    if not isinstance(m.get("images"), list):
        _manifest_error("images", "required array")
    if "errors" in m and not (isinstance(m["errors"], list)
                              and all(isinstance(e, str) for e in m["errors"])):
        _manifest_error("errors", "must be an array of strings")
    for i, img in enumerate(m["images"]):
        fi = f"images[{i}]"
        if not isinstance(img, dict):
            _manifest_error(fi, "must be an object")
        _check_manifest_keys(img, ("id", "masks"), fi)
        if not isinstance(img.get("id"), str):
            _manifest_error(f"{fi}.id", "required string")
        if not isinstance(img.get("masks"), list):
            _manifest_error(f"{fi}.masks", "required array")
        for j, mk in enumerate(img["masks"]):
            fm = f"{fi}.masks[{j}]"
            if not isinstance(mk, dict):
                _manifest_error(fm, "must be an object")
            _check_manifest_keys(mk, ("path", "score", "class_hint"), fm)
            if not isinstance(mk.get("path"), str):
                _manifest_error(f"{fm}.path", "required string")
            if not isinstance(mk.get("score"), (int, float)) or isinstance(mk.get("score"), bool):
                _manifest_error(f"{fm}.score", "required number")
            if "class_hint" in mk and mk["class_hint"] not in _CLASS_HINTS:
                _manifest_error(f"{fm}.class_hint",
                                f"must be one of {sorted(_CLASS_HINTS)}")
    return m


def _external_class_map(entry, manifest_dir, shape, select):
    """Reduce one manifest image entry to a class map per the --select rule."""
    chosen = sorted(entry["masks"], key=lambda mk: mk["score"])
    if select == "best" and chosen:
        chosen = chosen[-1:]
    out = np.zeros(shape, dtype=np.uint8)
    for mk in chosen:  # ascending score: higher-scored masks overwrite
        mask_path = os.path.join(manifest_dir, mk["path"])
        m = imageio.read_mask(mask_path)
        if m.shape != shape:
            raise IngestError(f"external mask {mask_path} has shape {m.shape}, "
                              f"truth is {shape}")
        hint = mk.get("class_hint", "crack")
        cls = data.CLASS_NAMES.index("crack" if hint == "crack-candidate" else hint)
        out[m > 0] = cls
    return out


def _delta(a, b, key):
    if a[key] is None or b[key] is None:
        return None
    return a[key] - b[key]


def _cmd_compare(args):
    manifest = load_manifest(args.external)
    manifest_dir = os.path.dirname(os.path.abspath(args.external))
    by_id = {img["id"]: img for img in manifest["images"]}
    truth_names = _list_images(args.truth, "truth")
    stems = [os.path.splitext(n)[0] for n in truth_names]

    truths, engine_preds, external_preds = [], [], []
    for name, stem in zip(truth_names, stems):
        truth = _read_class_mask(os.path.join(args.truth, name))
        engine_path = os.path.join(args.engine_pred, f"{stem}.png")
        if not os.path.exists(engine_path):
            raise IngestError(f"no engine prediction for {name}: expected {engine_path}")
        if stem not in by_id:
            raise IngestError(f"manifest has no entry for image id {stem!r}")
        truths.append(truth)
        engine_preds.append(_read_class_mask(engine_path))
        external_preds.append(_external_class_map(by_id[stem], manifest_dir,
                                                  truth.shape, args.select))

    def report_for(preds):
        scores = [(p == 1).astype(np.float64) for p in preds]
        return evaluate.evaluate_corpus(preds, truths, crack_scores=scores, ids=stems)

    engine_report = report_for(engine_preds)
    external_report = report_for(external_preds)
    per_image_deltas = []
    for e_entry, x_entry in zip(engine_report["per_image"], external_report["per_image"]):
        per_image_deltas.append({
            "id": e_entry["id"],
            "auc": _delta(x_entry, e_entry, "auc"),
            "accuracy": _delta(x_entry, e_entry, "accuracy"),
            "dice_crack": x_entry["dice"]["crack"] - e_entry["dice"]["crack"],
        })
    agg_e, agg_x = engine_report["aggregate"], external_report["aggregate"]
    report = {
        "source": manifest["source"],
        "select": args.select,
        "engine": engine_report,
        "external": external_report,
        "deltas": {  # positive = external ahead of engine
            "per_image": per_image_deltas,
            "aggregate": {
                "auc": _delta(agg_x, agg_e, "auc"),
                "accuracy": agg_x["accuracy"] - agg_e["accuracy"],
                "dice_crack": agg_x["dice"]["crack"] - agg_e["dice"]["crack"],
            },
        },
    }
    with open(args.report, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    print(f"engine accuracy {agg_e['accuracy']:.4f} vs external {agg_x['accuracy']:.4f} "
          f"({manifest['source']})")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="crackseg",
        description="Crack segmentation: train, infer, evaluate, weigh classes, "
                    "and compare against external masks.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True, help="JSON run config (strict keys)")
    t.add_argument("--out", help="output directory (overrides config key 'out')")
    t.add_argument("--resume", help="state.cseg checkpoint to continue from")
    t.set_defaults(func=_cmd_train)

    i = sub.add_parser("infer", help="predict class masks for a directory of images")
    i.add_argument("--model", required=True, help="model.cseg checkpoint")
    i.add_argument("--input", required=True, help="directory of input images")
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--prob-maps", action="store_true",
                   help="also write per-class softmax probabilities as PFM")
    i.add_argument("--crackmap-n", type=int, default=0, metavar="N",
                   help="also write the window-based crack probability map (radius N)")
    i.set_defaults(func=_cmd_infer)

    e = sub.add_parser("eval", help="score predicted masks against truth masks")
    e.add_argument("--pred", required=True, help="directory of predicted class masks")
    e.add_argument("--truth", required=True, help="directory of truth class masks")
    e.add_argument("--report", required=True, help="output JSON report path")
    e.add_argument("--roc", help="output ROC CSV path (threshold,fpr,tpr)")
    e.add_argument("--scores", help="directory of per-image crack-score PFMs "
                                    "(default: binary crack indicator of predictions)")
    e.set_defaults(func=_cmd_eval)

    w = sub.add_parser("weights", help="compute class weights from a mask directory")
    w.add_argument("--masks", required=True, help="directory of class mask PNGs")
    w.add_argument("--scheme", choices=sorted(_SCHEME_FLAGS), default="median",
                   help="median = median-frequency balancing; invmax = max(M)/M_i")
    w.add_argument("--out", help="also write the JSON to this path")
    w.set_defaults(func=_cmd_weights)

    c = sub.add_parser("compare", help="compare engine masks with an external mask set")
    c.add_argument("--engine-pred", required=True, help="directory of engine class masks")
    c.add_argument("--external", required=True, help="interchange manifest JSON")
    c.add_argument("--truth", required=True, help="directory of truth class masks")
    c.add_argument("--report", required=True, help="output JSON report path")
    c.add_argument("--select", choices=("best", "union"), default="best",
                   help="reduce multi-mask images: best = highest score only; "
                        "union = overlay all, highest score on top")
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CrackSegError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
