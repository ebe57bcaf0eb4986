"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"SSANCKPT" | u32 version | u64 header length | UTF-8 JSON header | float64 payloads

The header holds the model config, the training step, the RNG state, a
manifest of ``{name, shape, offset}`` entries (offsets relative to the start
of the payload) and a CRC32 of the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, SSANModel

MAGIC = b"SSANCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class UnsupportedVersion(FormatError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SSANModel, step: int = 0, rng_state=None, meta=None,
                   params: dict | None = None) -> "Checkpoint":
        return cls(model.config, params if params is not None else model.params.state_dict(),
                   step, rng_state, dict(meta or {}))

    def to_model(self) -> SSANModel:
        model = SSANModel(self.config)
        model.params.load_state_dict(self.params)
        model.params.step = self.step
        return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": manifest,
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise FormatError("checkpoint truncated before header")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version > VERSION:
        raise UnsupportedVersion(f"checkpoint version {version} is newer than supported version {VERSION}")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    if start + head_len > len(blob):
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[start:start + head_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        manifest = header["tensors"]
        payload = blob[start + head_len:]
        if len(payload) != header["payload_bytes"]:
            raise FormatError(f"payload has {len(payload)} bytes, header says {header['payload_bytes']}")
        if zlib.crc32(payload) != header["payload_crc32"]:
            raise FormatError("payload checksum mismatch")
        params = {}
        for entry in manifest:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            off = int(entry["offset"])
            if off < 0 or off + 8 * count > len(payload):
                raise FormatError(f"tensor {entry['name']!r} runs past the payload")
            params[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count,
                                                  offset=off).astype(np.float64).reshape(shape)
        ckpt = Checkpoint(config, params, int(header["step"]), header.get("rng_state"),
                          dict(header.get("meta", {})))
        expected = SSANModel(config).params.state_dict()
        if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
            raise FormatError("tensor manifest does not match the model config")
    except FormatError:
        raise
    except Exception as exc:  # corrupt JSON, wrong types, bad config values
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"no checkpoint at {p}")
    return from_bytes(p.read_bytes())
