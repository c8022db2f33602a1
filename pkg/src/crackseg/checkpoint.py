"""CSEG1 checkpoint container.

Layout: magic ``CSEG``, version u32 = 1, one length-prefixed UTF-8 JSON
config record, u32 tensor count, then per tensor a u16-length-prefixed
UTF-8 key, u8 rank, u32 dims, and the row-major little-endian float32
payload. All integers little-endian. Float32 data round-trips bitwise.

Reserved key prefixes: ``adam.m.`` / ``adam.v.`` and scalar ``adam.t``
hold optimizer state; ``norm.mean`` holds the zero-center channel means;
``best.`` holds the best-validation-epoch parameter snapshot.
"""
import json
import os
import struct

import numpy as np

from . import model
from .errors import CheckpointError

MAGIC = b"CSEG"
VERSION = 1


def save_tensors(path, record, tensors):
    """Write a config record plus named float32 tensors; atomic via rename."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    rec = json.dumps(record, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(rec)) + rec
    blob += struct.pack("<I", len(tensors))
    for key, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype=np.float32)
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise CheckpointError(f"tensor key too long: {key[:40]}...")
        blob += struct.pack("<H", len(kb)) + kb
        blob += struct.pack("<B", a.ndim)
        for d in a.shape:
            blob += struct.pack("<I", d)
        blob += a.astype("<f4", copy=False).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path, "rb") as f:
            self.buf = f.read()
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_tensors(path):
    """Read a CSEG1 file back into (record, {key: float32 array})."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    r = _Reader(path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a CSEG1 checkpoint (bad magic bytes)")
    version = r.u("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    rec_len = r.u("<I", "record length")
    try:
        record = json.loads(r.take(rec_len, "config record").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable config record ({e})") from e
    tensors = {}
    count = r.u("<I", "tensor count")
    for _ in range(count):
        klen = r.u("<H", "key length")
        key = r.take(klen, "key").decode("utf-8")
        rank = r.u("<B", "rank")
        shape = tuple(r.u("<I", f"dim of {key}") for _ in range(rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = r.take(4 * n, f"data of {key}")
        tensors[key] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return record, tensors


def params_to_tensors(params, prefix=""):
    return {prefix + k: v for k, v in params.flat().items()}


def params_from_tensors(config, tensors, prefix="", source="checkpoint"):
    """Rebuild UNetParams for `config` from a tensor dict; validates shapes."""
    from . import ops
    layers = {}
    for spec in model.layer_inventory(config):
        pieces = []
        for suffix, shape in (("w", (spec.kh, spec.kw, spec.cin, spec.cout)), ("b", (spec.cout,))):
            key = f"{prefix}{spec.key}.{suffix}"
            if key not in tensors:
                raise CheckpointError(f"{source}: missing tensor {key!r}")
            a = tensors[key]
            if a.shape != shape:
                raise CheckpointError(
                    f"{source}: tensor {key!r} has shape {a.shape}, config expects {shape}")
            pieces.append(a.copy())
        layers[spec.key] = ops.ConvParams(pieces[0], pieces[1], spec.stride, spec.padding)
    return model.UNetParams(config, layers)


def save_model(path, params, channel_means, extra_record=None):
    """Persist inference-ready parameters plus the zero-center means."""
    record = {"kind": "model", "model": params.config.to_dict()}
    if extra_record:
        record.update(extra_record)
    tensors = params_to_tensors(params)
    tensors["norm.mean"] = np.asarray(channel_means, dtype=np.float32)
    save_tensors(path, record, tensors)


def load_model(path):
    """Load a model checkpoint -> (UNetParams, channel_means, record)."""
    record, tensors = load_tensors(path)
    if record.get("kind") != "model":
        raise CheckpointError(f"{path}: not a model checkpoint (kind={record.get('kind')!r})")
    try:
        config = model.UNetConfig.from_dict(record["model"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: invalid model config record ({e})") from e
    params = params_from_tensors(config, tensors, source=path)
    if "norm.mean" not in tensors:
        raise CheckpointError(f"{path}: missing normalization means (norm.mean)")
    means = tensors["norm.mean"]
    if means.shape != (config.input_channels,):
        raise CheckpointError(f"{path}: norm.mean shape {means.shape} does not match "
                              f"{config.input_channels} input channels")
    return params, means, record
