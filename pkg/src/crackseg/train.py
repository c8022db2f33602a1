"""Training protocol: minibatch epochs, validation, early stop, resume.

Every stochastic choice draws from a generator derived functionally from
the run seed — minibatch order from (seed, epoch), dropout from
(seed, DROPOUT_SALT, epoch, batch) — so a run interrupted at any epoch
boundary and resumed from its state checkpoint is bitwise identical to
an uninterrupted run, and same-seed runs are bitwise identical.

Artifacts (when an output directory is given): per-epoch ``state.cseg``
(parameters + optimizer moments + controller, resumable), final
``model.cseg`` (best-validation-epoch parameters + channel means),
``trainlog.csv``, and ``summary.json``.
"""
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, data, losses, model, optim
from .errors import ConfigError, CrackSegError, TrainingError

LOSS_KINDS = ("weighted-ce", "dice")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 30
    batch_size: int = 32
    eta: float = 1e-4
    loss: str = "weighted-ce"
    weight_scheme: str = "median-frequency"
    patience: int = 10
    seed: int = 0
    constant_eta: bool = False
    split_fraction: float = 0.8
    target_train_acc: float = None  # optional early exit for overfit runs

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.weight_scheme not in losses.SCHEMES:
            raise ConfigError(f"weight_scheme must be one of {losses.SCHEMES}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 < self.split_fraction < 1:
            raise ConfigError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if self.target_train_acc is not None and not 0 < self.target_train_acc <= 1:
            raise ConfigError(f"target_train_acc must lie in (0, 1], got {self.target_train_acc}")

    def to_dict(self):
        return {
            "max_epochs": self.max_epochs, "batch_size": self.batch_size,
            "eta": self.eta, "loss": self.loss, "weight_scheme": self.weight_scheme,
            "patience": self.patience, "seed": self.seed, "constant_eta": self.constant_eta,
            "split_fraction": self.split_fraction, "target_train_acc": self.target_train_acc,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    warnings: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n")
            for r in self.records:
                f.write(f"{r.epoch},{r.train_loss!r},{r.train_acc!r},"
                        f"{r.val_loss!r},{r.val_acc!r},{r.seconds!r}\n")

    def summary(self):
        best = next((r for r in self.records if r.epoch == self.best_epoch), None)

        def clean(x):  # keep strict-JSON consumers working when val is empty
            return None if x is None or math.isnan(x) else x

        return {
            "epochs_run": len(self.records),
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "best_val_acc": None if best is None else clean(best.val_acc),
            "final_train_acc": clean(self.records[-1].train_acc) if self.records else None,
            "final_train_loss": clean(self.records[-1].train_loss) if self.records else None,
            "warnings": self.warnings,
        }


def _loss_fn(kind, weights):
    if kind == "weighted-ce":
        return lambda logits, labels: losses.weighted_cross_entropy(logits, labels, weights)
    return losses.dice_loss_on_logits


def _weights_from_split(samples, scheme):
    """Class weights from the training split: per-class pixel counts, with
    per-image-presence totals as the frequency denominators."""
    counts = np.zeros(data.NUM_CLASSES, dtype=np.float64)
    presence = np.zeros(data.NUM_CLASSES, dtype=np.float64)
    for s in samples:
        n_pixels = s.mask.size
        binc = np.bincount(s.mask.ravel(), minlength=data.NUM_CLASSES)
        counts += binc
        presence += np.where(binc > 0, n_pixels, 0)
    return losses.class_weights(counts, presence, scheme, class_names=data.CLASS_NAMES)


def evaluate_split(params, samples, loss_fn, batch_size):
    """Infer-mode loss and pixel accuracy over `samples` (no shuffling;
    parameters and optimizer state are read-only here)."""
    total_loss = 0.0
    correct = 0
    pixels = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        labels = np.stack([data.one_hot(s.mask) for s in chunk])
        logits, _ = model.forward(params, images, mode="infer")
        lv, _ = loss_fn(logits, labels)
        n = images.shape[0] * images.shape[1] * images.shape[2]
        total_loss += lv.value * n
        correct += int((logits.argmax(axis=-1) == np.stack([s.mask for s in chunk])).sum())
        pixels += n
    return total_loss / pixels, correct / pixels


@dataclass
class _FitState:
    params: model.UNetParams
    adam: optim.AdamState
    controller: optim.EarlyStopController
    means: np.ndarray
    epoch: int = 0  # last completed epoch
    best_epoch: int = 0
    best_val_acc: float = -math.inf
    best_params: model.UNetParams = None


def _controller_record(c):
    d = c.to_dict()
    if d["best_metric"] == -math.inf:
        d["best_metric"] = None
    return d


def _controller_from_record(d):
    d = dict(d)
    if d["best_metric"] is None:
        d["best_metric"] = -math.inf
    return optim.EarlyStopController.from_dict(d)


def _save_state(path, st, train_config):
    record = {
        "kind": "state",
        "model": st.params.config.to_dict(),
        "train": train_config.to_dict(),
        "epoch": st.epoch,
        "best_epoch": st.best_epoch,
        "best_val_acc": None if st.best_val_acc == -math.inf else st.best_val_acc,
        "controller": _controller_record(st.controller),
    }
    tensors = checkpoint.params_to_tensors(st.params)
    tensors.update(checkpoint.params_to_tensors(st.best_params, prefix="best."))
    for k, m in st.adam.m.items():
        tensors[f"adam.m.{k}"] = m
    for k, v in st.adam.v.items():
        tensors[f"adam.v.{k}"] = v
    tensors["adam.t"] = np.array([st.adam.t], dtype=np.float32)
    tensors["norm.mean"] = st.means
    checkpoint.save_tensors(path, record, tensors)


def load_state(path):
    """Rebuild a resumable _FitState + stored TrainConfig from state.cseg."""
    record, tensors = checkpoint.load_tensors(path)
    if record.get("kind") != "state":
        raise ConfigError(f"{path}: not a training-state checkpoint "
                          f"(kind={record.get('kind')!r})")
    cfg = model.UNetConfig.from_dict(record["model"])
    params = checkpoint.params_from_tensors(cfg, tensors, source=path)
    best_params = checkpoint.params_from_tensors(cfg, tensors, prefix="best.", source=path)
    flat = params.flat()
    adam = optim.AdamState(
        m={k: tensors[f"adam.m.{k}"].copy() for k in flat},
        v={k: tensors[f"adam.v.{k}"].copy() for k in flat},
        t=int(tensors["adam.t"].reshape(-1)[0]),
    )
    best_val = record["best_val_acc"]
    st = _FitState(
        params=params, adam=adam,
        controller=_controller_from_record(record["controller"]),
        means=tensors["norm.mean"].copy(),
        epoch=int(record["epoch"]),
        best_epoch=int(record["best_epoch"]),
        best_val_acc=-math.inf if best_val is None else best_val,
        best_params=best_params,
    )
    return st, TrainConfig.from_dict(record["train"])


def _prepare(samples, train_config, means=None):
    train_raw, val_raw = data.split(samples, train_config.split_fraction, train_config.seed)
    if not train_raw:
        raise ConfigError("empty training split: corpus too small for the split fraction")
    if means is None:
        means = data.channel_means(train_raw)
    train_split = data.zero_center(train_raw, means)
    val_split = data.zero_center(val_raw, means)
    weights = _weights_from_split(train_raw, train_config.weight_scheme)
    return train_split, val_split, weights, means


def _fit(st, samples, train_config, out_dir, log):
    tc = train_config
    train_split, val_split, weights, _ = _prepare(samples, tc, means=st.means)
    loss_fn = _loss_fn(tc.loss, weights)
    if not val_split:
        log.warnings.append("validation split is empty; early stopping monitors "
                            "training accuracy instead")
    flat = st.params.flat()
    adam_cfg = optim.AdamConfig(eta=tc.eta, constant_eta=tc.constant_eta)
    stop_reason = "max_epochs reached"
    for epoch in range(st.epoch + 1, tc.max_epochs + 1):
        tic = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        pixels = 0
        for b, (images, labels) in enumerate(
                data.minibatches(train_split, tc.batch_size, tc.seed, epoch)):
            rng = np.random.default_rng([tc.seed, data.DROPOUT_SALT, epoch, b])
            try:
                logits, trace = model.forward(st.params, images, mode="train", rng=rng)
                lv, grad_logits = loss_fn(logits, labels)
                grads = model.backward(st.params, trace, grad_logits)
                optim.adam_step(st.adam, flat, grads, adam_cfg)
            except CrackSegError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            n = images.shape[0] * images.shape[1] * images.shape[2]
            loss_sum += lv.value * n
            correct += int((logits.argmax(axis=-1) == labels.argmax(axis=-1)).sum())
            pixels += n
        train_loss = loss_sum / pixels
        train_acc = correct / pixels

        try:
            if val_split:
                val_loss, val_acc = evaluate_split(st.params, val_split, loss_fn, tc.batch_size)
                stop_metric = val_acc
            else:
                val_loss, val_acc = math.nan, math.nan
                stop_metric = train_acc
        except CrackSegError as e:
            raise TrainingError(f"epoch {epoch}, validation: {e}") from e
        st.epoch = epoch
        if stop_metric > st.best_val_acc:
            st.best_val_acc = stop_metric
            st.best_epoch = epoch
            st.best_params = st.params.copy()
        stop_now = st.controller.should_stop(stop_metric)
        log.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc,
                                       time.perf_counter() - tic))
        if out_dir is not None:
            _save_state(os.path.join(out_dir, "state.cseg"), st, tc)
        if stop_now:
            stop_reason = (f"no improvement for {st.controller.patience} epochs "
                           f"(best epoch {st.best_epoch})")
            break
        if tc.target_train_acc is not None:
            try:
                _, acc = evaluate_split(st.params, train_split, loss_fn, tc.batch_size)
            except CrackSegError as e:
                raise TrainingError(f"epoch {epoch}, training-accuracy check: {e}") from e
            if acc >= tc.target_train_acc:
                stop_reason = f"target training accuracy {tc.target_train_acc} reached"
                break
    log.stop_reason = stop_reason
    log.best_epoch = st.best_epoch
    if out_dir is not None:
        checkpoint.save_model(
            os.path.join(out_dir, "model.cseg"), st.best_params, st.means,
            extra_record={
                "train": tc.to_dict(),
                "weights": weights.to_dict(),
                "best_epoch": st.best_epoch,
                "stop_reason": stop_reason,
            })
        log.write_csv(os.path.join(out_dir, "trainlog.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(log.summary(), f, indent=2)
            f.write("\n")
    return st.best_params, log


def train(samples, model_config, train_config, out_dir=None):
    """Train from scratch; returns (best-epoch UNetParams, TrainLog)."""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    train_raw, _ = data.split(samples, train_config.split_fraction, train_config.seed)
    if not train_raw:
        raise ConfigError("empty training split: corpus too small for the split fraction")
    means = data.channel_means(train_raw)
    init_rng = np.random.default_rng([train_config.seed, 11])
    params = model.build(model_config, init_rng, dtype=np.float32)
    st = _FitState(params=params, adam=optim.AdamState.zeros_like(params.flat()),
                   controller=optim.EarlyStopController(patience=train_config.patience),
                   means=means, best_params=params.copy())
    return _fit(st, samples, train_config, out_dir, TrainLog())


def resume(state_path, samples, train_config=None, model_config=None, out_dir=None):
    """Continue a run from its state checkpoint, bitwise-faithfully.

    `train_config` defaults to the one stored in the checkpoint; passing a
    different batch_size is allowed but recorded as a warning. A
    `model_config` that disagrees with the checkpoint is a ConfigError.
    """
    st, stored_tc = load_state(state_path)
    # compare serialized forms: a config written with dropout_stages=None and
    # one carrying the explicitly resolved stages are the same network
    if model_config is not None and model_config.to_dict() != st.params.config.to_dict():
        raise ConfigError(f"{state_path}: checkpoint model config {st.params.config.to_dict()} "
                          f"does not match requested {model_config.to_dict()}")
    log = TrainLog()
    tc = stored_tc if train_config is None else train_config
    if tc.batch_size != stored_tc.batch_size:
        log.warnings.append(f"batch_size changed on resume: checkpoint used "
                            f"{stored_tc.batch_size}, continuing with {tc.batch_size}")
    if tc.seed != stored_tc.seed:
        log.warnings.append(f"seed changed on resume: checkpoint used "
                            f"{stored_tc.seed}, continuing with {tc.seed}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if st.epoch >= tc.max_epochs:
        log.stop_reason = "max_epochs already reached at resume"
        log.best_epoch = st.best_epoch
        return st.best_params, log
    return _fit(st, samples, tc, out_dir, log)
