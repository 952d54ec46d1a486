"""Model checkpoint files ("MDLC").

Layout (little-endian): magic, u32 version, u32 header length, JSON header
(architecture plus free-form metadata), u32 parameter count, then per
parameter ``u16 name length, name, u32 ndim, u32 dims..., f32 data``, and
finally ``u32 length`` followed by the embedded normalizer blob.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio.normalize import Normalizer
from .base import SequenceModel
from .ssm import MambaConfig, MambaTranslator
from .transformer import TransformerConfig, TransformerTranslator

MAGIC = b"MDLC"
VERSION = 1

VARIANTS = {
    "transformer": (TransformerTranslator, TransformerConfig),
    "mamba": (MambaTranslator, MambaConfig),
}


@dataclass
class ModelCheckpoint:
    model: SequenceModel
    normalizer: Normalizer | None
    meta: dict = field(default_factory=dict)


def build_model(architecture: dict, seed: int = 0) -> SequenceModel:
    arch = dict(architecture)
    variant = arch.pop("variant")
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; expected one of {sorted(VARIANTS)}")
    model_cls, config_cls = VARIANTS[variant]
    return model_cls(config_cls(**arch), seed=seed)


def checkpoint_to_bytes(ckpt: ModelCheckpoint) -> bytes:
    header = json.dumps({"architecture": ckpt.model.architecture(), "meta": ckpt.meta},
                        sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    params = list(ckpt.model.named_parameters())
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    blob = ckpt.normalizer.to_bytes() if ckpt.normalizer is not None else b""
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> ModelCheckpoint:
    if data[:4] != MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:4]!r}")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(data[pos:pos + header_len])
    pos += header_len
    model = build_model(header["architecture"])
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 4)
        pos += 4 + 4 * ndim
        n = int(np.prod(shape))
        state[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
        pos += 4 * n
    model.load_state_dict(state)
    (blob_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    normalizer = Normalizer.from_bytes(data[pos:pos + blob_len]) if blob_len else None
    return ModelCheckpoint(model, normalizer, header.get("meta", {}))


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> ModelCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
