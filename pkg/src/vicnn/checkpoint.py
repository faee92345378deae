"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"VICNN"  magic
    u8        format version (1)
    u32       length of the model-spec JSON, then the JSON (UTF-8)
    f32[]     parameters, conv layer by conv layer: weights (out, in, k, k)
              row-major, then bias
    f32[]     Adam first moments, same layout
    f32[]     Adam second moments, same layout
    u32       length of the metadata JSON, then the JSON (UTF-8): history,
              training config, Adam scalars, corpus-manifest digest

Array sizes are implied by the spec, so the file carries no per-array headers.
JSON is written with sorted keys, which makes load-then-save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vicnn.engine.adam import AdamState
from vicnn.errors import ValidationError
from vicnn.zoo import ModelSpec

MAGIC = b"VICNN"
VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: list
    adam: AdamState
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    manifest_digest: str = ""
    best_epoch: int = 0
    status: str = "ok"

    @property
    def model_id(self) -> str:
        seed = self.config.get("seed")
        task = self.config.get("task")
        parts = [self.spec.name] + ([task] if task else []) + ([f"seed{seed}"] if seed is not None else [])
        return "-".join(parts)


def param_shapes(spec: ModelSpec) -> list[tuple]:
    shapes, c = [], spec.input_shape[0]
    for layer in spec.conv_layers:
        shapes.append((layer.out_ch, c, layer.kernel, layer.kernel))
        shapes.append((layer.out_ch,))
        c = layer.out_ch
    return shapes


def _blob(arrays, shapes) -> bytes:
    out = []
    for a, shape in zip(arrays, shapes):
        a = np.asarray(a)
        if a.shape != shape:
            raise ValidationError(f"array shape {a.shape} does not match spec shape {shape}")
        out.append(np.ascontiguousarray(a, dtype=_LE_F32).tobytes())
    return b"".join(out)


def to_bytes(ckpt: Checkpoint) -> bytes:
    shapes = param_shapes(ckpt.spec)
    if len(ckpt.params) != len(shapes):
        raise ValidationError(f"{ckpt.spec.name}: expected {len(shapes)} arrays, got {len(ckpt.params)}")
    m = ckpt.adam.m or [np.zeros(s, np.float32) for s in shapes]
    v = ckpt.adam.v or [np.zeros(s, np.float32) for s in shapes]
    spec_json = ckpt.spec.to_json().encode("utf-8")
    meta = {
        "history": ckpt.history,
        "config": ckpt.config,
        "manifest_digest": ckpt.manifest_digest,
        "best_epoch": ckpt.best_epoch,
        "status": ckpt.status,
        "adam": {"step": ckpt.adam.step, "lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
    }
    meta_json = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([
        MAGIC,
        bytes([VERSION]),
        struct.pack("<I", len(spec_json)),
        spec_json,
        _blob(ckpt.params, shapes),
        _blob(m, shapes),
        _blob(v, shapes),
        struct.pack("<I", len(meta_json)),
        meta_json,
    ])


def from_bytes(data: bytes) -> Checkpoint:
    if data[:5] != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    if len(data) < 10 or data[5] != VERSION:
        raise ValidationError(f"unsupported checkpoint version {data[5] if len(data) > 5 else None}")
    pos = 6

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValidationError("checkpoint file is truncated")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (spec_len,) = struct.unpack("<I", take(4))
    try:
        spec = ModelSpec.from_json(take(spec_len).decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ValidationError("checkpoint spec is not UTF-8") from exc
    shapes = param_shapes(spec)

    def arrays():
        out = []
        for shape in shapes:
            n = int(np.prod(shape))
            out.append(np.frombuffer(take(4 * n), dtype=_LE_F32).astype(np.float32).reshape(shape))
        return out

    params, m, v = arrays(), arrays(), arrays()
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"checkpoint metadata unreadable: {exc}") from exc
    if pos != len(data):
        raise ValidationError(f"{len(data) - pos} trailing bytes after checkpoint")
    a = meta["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"], m=m, v=v)
    return Checkpoint(spec, params, adam, meta["history"], meta["config"], meta["manifest_digest"],
                      meta["best_epoch"], meta["status"])


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
