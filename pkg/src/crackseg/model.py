"""Encoder/bridge/decoder segmentation network built from the layer primitives.

The default configuration is the 4-stage network used throughout this
project: per encoder stage two same-padded 3x3 convolutions + ReLU, 2x2
max pooling between stages, 50% dropout at the deepest encoder stage and
the bridge, then four decoder stages of learned 2x upsampling, depth
concatenation with the matching encoder features (encoder channels
first), two 3x3 convolutions + ReLU, and a final 1x1 convolution to class
logits. Softmax is left to the loss/evaluation layer.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 256
    input_channels: int = 3
    num_classes: int = 3
    base_filters: int = 64
    depth: int = 4
    dropout_rate: float = 0.5
    # None means the conventional placement: deepest encoder stage + bridge.
    dropout_stages: frozenset = None

    def __post_init__(self):
        if self.depth < 1 or self.base_filters < 1:
            raise ConfigError("depth and base_filters must be >= 1")
        if self.input_size % (1 << self.depth) != 0:
            raise ConfigError(f"input_size {self.input_size} not divisible by 2^depth = {1 << self.depth}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.num_classes < 2 or self.input_channels < 1:
            raise ConfigError("need num_classes >= 2 and input_channels >= 1")
        if self.dropout_stages is not None:
            stages = frozenset(self.dropout_stages)
            valid = {f"encoder-{s}" for s in range(1, self.depth + 1)} | {"bridge"}
            unknown = stages - valid
            if unknown:
                raise ConfigError(f"unknown dropout stages: {sorted(unknown)}")
            object.__setattr__(self, "dropout_stages", stages)

    def resolved_dropout_stages(self):
        if self.dropout_stages is not None:
            return self.dropout_stages
        return frozenset({f"encoder-{self.depth}", "bridge"})

    def to_dict(self):
        return {
            "input_size": self.input_size,
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "base_filters": self.base_filters,
            "depth": self.depth,
            "dropout_rate": self.dropout_rate,
            "dropout_stages": sorted(self.resolved_dropout_stages()),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("dropout_stages") is not None:
            d["dropout_stages"] = frozenset(d["dropout_stages"])
        return cls(**d)


@dataclass
class LayerSpec:
    key: str
    kind: str  # "conv" | "tconv"
    kh: int
    kw: int
    cin: int
    cout: int
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    @property
    def n_params(self):
        return self.kh * self.kw * self.cin * self.cout + self.cout


def layer_inventory(config):
    """Ordered list of every learnable layer the config generates."""
    f = config.base_filters
    inv = []

    def conv3(key, cin, cout):
        inv.append(LayerSpec(key, "conv", 3, 3, cin, cout, (1, 1), (1, 1)))

    cin = config.input_channels
    for s in range(1, config.depth + 1):
        cout = f << (s - 1)
        conv3(f"encoder{s}.conv1", cin, cout)
        conv3(f"encoder{s}.conv2", cout, cout)
        cin = cout
    bridge = f << config.depth
    conv3("bridge.conv1", cin, bridge)
    conv3("bridge.conv2", bridge, bridge)
    cin = bridge
    for l in range(1, config.depth + 1):
        cout = f << (config.depth - l)
        inv.append(LayerSpec(f"decoder{l}.upconv", "tconv", 2, 2, cin, cout, (2, 2), (0, 0)))
        conv3(f"decoder{l}.conv1", 2 * cout, cout)
        conv3(f"decoder{l}.conv2", cout, cout)
        cin = cout
    inv.append(LayerSpec("final", "conv", 1, 1, cin, config.num_classes, (1, 1), (0, 0)))
    return inv


def parameter_count(config):
    """Total learnable scalar count (kernels + biases) over all layers."""
    return sum(spec.n_params for spec in layer_inventory(config))


@dataclass
class UNetParams:
    config: UNetConfig
    layers: dict  # key -> ops.ConvParams, in inventory order

    def flat(self):
        """Live views of every parameter tensor, keyed '<layer>.w' / '<layer>.b'."""
        out = {}
        for key, p in self.layers.items():
            out[f"{key}.w"] = p.kernels
            out[f"{key}.b"] = p.biases
        return out

    def copy(self):
        layers = {
            k: ops.ConvParams(p.kernels.copy(), p.biases.copy(), p.stride, p.padding)
            for k, p in self.layers.items()
        }
        return UNetParams(self.config, layers)


def build(config, rng, dtype=np.float32):
    """Initialize parameters: kernels ~ N(0, 2/fan_in), biases zero."""
    layers = {}
    for spec in layer_inventory(config):
        fan_in = spec.kh * spec.kw * spec.cin
        std = math.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(spec.kh, spec.kw, spec.cin, spec.cout)).astype(dtype)
        b = np.zeros(spec.cout, dtype=dtype)
        layers[spec.key] = ops.ConvParams(w, b, spec.stride, spec.padding)
    return UNetParams(config, layers)


@dataclass
class ConvBlockTrace:
    x0: np.ndarray  # input to conv1
    z1: np.ndarray  # conv1 pre-activation
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray


@dataclass
class EncoderTrace:
    block: ConvBlockTrace
    drop_mask: object
    skip: np.ndarray  # stage output (post-dropout), pre-pool
    pool_arg: np.ndarray


@dataclass
class DecoderTrace:
    x_in: np.ndarray
    up_z: np.ndarray
    up_a: np.ndarray
    concat_in: np.ndarray
    skip_channels: int
    block: ConvBlockTrace


@dataclass
class ForwardTrace:
    """Everything backward() needs to rerun the network in reverse."""

    mode: str
    batched: bool
    encoders: list = field(default_factory=list)
    bridge: ConvBlockTrace = None
    bridge_drop_mask: object = None
    decoders: list = field(default_factory=list)
    final_in: np.ndarray = None
    logits_shape: tuple = None


def _conv_block(params, prefix, x):
    z1 = ops.conv2d_forward(x, params.layers[f"{prefix}.conv1"])
    a1 = ops.relu(z1)
    z2 = ops.conv2d_forward(a1, params.layers[f"{prefix}.conv2"])
    a2 = ops.relu(z2)
    return ConvBlockTrace(x, z1, a1, z2, a2)


def forward(params, image, mode="infer", rng=None):
    """Run the network; returns (logits, trace).

    ``image`` is (H, W, C) or (B, H, W, C) with H = W = config.input_size.
    Train mode applies dropout at the configured stages and therefore
    needs ``rng``; infer mode is a pure function of (params, image).
    """
    cfg = params.config
    x4, squeeze = ops._as_batch(image)
    if x4.shape[1] != cfg.input_size or x4.shape[2] != cfg.input_size:
        raise InputError(f"expected {cfg.input_size}x{cfg.input_size} input, got {x4.shape[1]}x{x4.shape[2]}")
    if x4.shape[3] != cfg.input_channels:
        raise InputError(f"expected {cfg.input_channels} input channels, got {x4.shape[3]}")
    if mode not in ("train", "infer"):
        raise InputError(f"mode must be 'train' or 'infer', got {mode!r}")
    drop_stages = cfg.resolved_dropout_stages() if mode == "train" else frozenset()

    trace = ForwardTrace(mode=mode, batched=not squeeze)
    x = x4
    for s in range(1, cfg.depth + 1):
        block = _conv_block(params, f"encoder{s}", x)
        out, mask = ops.dropout(block.a2, cfg.dropout_rate, mode, rng) \
            if f"encoder-{s}" in drop_stages else (block.a2, None)
        x, arg = ops.maxpool2x2(out)
        trace.encoders.append(EncoderTrace(block, mask, out, arg))

    trace.bridge = _conv_block(params, "bridge", x)
    x = trace.bridge.a2
    if "bridge" in drop_stages:
        x, trace.bridge_drop_mask = ops.dropout(x, cfg.dropout_rate, mode, rng)

    for l in range(1, cfg.depth + 1):
        skip = trace.encoders[cfg.depth - l].skip
        up_z = ops.transposed_conv2x2_forward(x, params.layers[f"decoder{l}.upconv"])
        up_a = ops.relu(up_z)
        cat = ops.concat_depth(skip, up_a)
        block = _conv_block(params, f"decoder{l}", cat)
        trace.decoders.append(DecoderTrace(x, up_z, up_a, cat, skip.shape[-1], block))
        x = block.a2

    trace.final_in = x
    logits = ops.conv2d_forward(x, params.layers["final"])
    trace.logits_shape = logits.shape
    return ops._unbatch(logits, squeeze), trace


def _conv_block_backward(params, prefix, tr, grad_out, grads):
    g = ops.relu_backward(tr.z2, grad_out)
    gx, gw, gb = ops.conv2d_backward(tr.a1, params.layers[f"{prefix}.conv2"], g)
    grads[f"{prefix}.conv2.w"] = gw
    grads[f"{prefix}.conv2.b"] = gb
    g = ops.relu_backward(tr.z1, gx)
    gx, gw, gb = ops.conv2d_backward(tr.x0, params.layers[f"{prefix}.conv1"], g)
    grads[f"{prefix}.conv1.w"] = gw
    grads[f"{prefix}.conv1.b"] = gb
    return gx


def backward(params, trace, grad_logits):
    """Backpropagate grad_logits through a recorded forward pass.

    Returns gradients keyed like UNetParams.flat().
    """
    cfg = params.config
    g4, _ = ops._as_batch(grad_logits)
    if len(trace.encoders) != cfg.depth or g4.shape != trace.logits_shape:
        raise InputError("trace does not match these parameters / this gradient")
    grads = {}
    gx, gw, gb = ops.conv2d_backward(trace.final_in, params.layers["final"], g4)
    grads["final.w"] = gw
    grads["final.b"] = gb
    g = gx

    skip_grads = [None] * cfg.depth
    for l in range(cfg.depth, 0, -1):
        tr = trace.decoders[l - 1]
        g_cat = _conv_block_backward(params, f"decoder{l}", tr.block, g, grads)
        g_skip, g_up = ops.split_depth(g_cat, tr.skip_channels)
        skip_grads[cfg.depth - l] = g_skip
        g_up = ops.relu_backward(tr.up_z, g_up)
        gx, gw, gb = ops.transposed_conv2x2_backward(tr.x_in, params.layers[f"decoder{l}.upconv"], g_up)
        grads[f"decoder{l}.upconv.w"] = gw
        grads[f"decoder{l}.upconv.b"] = gb
        g = gx

    g = ops.dropout_backward(trace.bridge_drop_mask, g)
    g = _conv_block_backward(params, "bridge", trace.bridge, g, grads)

    for s in range(cfg.depth, 0, -1):
        tr = trace.encoders[s - 1]
        g = ops.maxpool2x2_backward(tr.pool_arg, g)
        g = g + skip_grads[s - 1]
        g = ops.dropout_backward(tr.drop_mask, g)
        g = _conv_block_backward(params, f"encoder{s}", tr.block, g, grads)
    return grads
