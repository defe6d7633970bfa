"""Binary model container.

Layout (little-endian)::

    b"NSNN" | u16 version | u32 header length | JSON header
    | float64 weight blocks, row-major, in header order
    | float64 calibration block (scale then offset) per calibrated network
    | u32 CRC-32 of everything before it

One file may carry several per-node networks (a bundle for a whole case).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import EncoderConfig
from .snn import NeuronConfig, SnnModel, WidthMismatchError

MAGIC = b"NSNN"
VERSION = 1


class ModelFormatError(ValueError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


def _header_entry(m: SnnModel) -> dict:
    return {
        "node": m.node,
        "remotes": list(m.remotes),
        "widths": m.widths,
        "neuron": asdict(m.neuron),
        "decode_tau": m.decode_tau,
        "encoder": m.encoder.to_dict() if m.encoder is not None else None,
        "calibrated": m.calibrated,
    }


def dumps(models: Sequence[SnnModel]) -> bytes:
    header = json.dumps({"networks": [_header_entry(m) for m in models]}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(header)), header]
    for m in models:
        parts.extend(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in m.weights)
    for m in models:
        if m.calibrated:
            parts.append(np.asarray(m.scale, dtype="<f8").tobytes())
            parts.append(np.asarray(m.offset, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes, input_width: int | None = None) -> list[SnnModel]:
    if len(data) < 14 or data[:4] != MAGIC:
        raise ModelFormatError("not an NSNN model file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("model file checksum mismatch (corrupt or truncated)")
    version, hlen = struct.unpack("<HI", body[4:10])
    if version != VERSION:
        raise VersionMismatchError(f"model format version {version}, expected {VERSION}")
    header = json.loads(body[10:10 + hlen].decode())
    pos = 10 + hlen

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) * 8
        if pos + n > len(body):
            raise ModelFormatError("model file shorter than its header declares")
        arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(shape)), offset=pos).reshape(shape)
        pos += n
        return arr.astype(np.float64)

    entries = header["networks"]
    weights = [[take((a, b)) for a, b in zip(e["widths"][:-1], e["widths"][1:])] for e in entries]
    models = []
    for e, ws in zip(entries, weights):
        if input_width is not None and e["widths"][0] != input_width:
            raise WidthMismatchError(f"model input width {e['widths'][0]} != encoder width {input_width}")
        scale = offset = None
        if e["calibrated"]:
            n_out = e["widths"][-1]
            scale, offset = take((n_out,)), take((n_out,))
        enc = EncoderConfig.from_dict(e["encoder"]) if e["encoder"] is not None else None
        models.append(SnnModel(ws, NeuronConfig(**e["neuron"]), enc, scale, offset, e["decode_tau"],
                               e["node"], tuple(e["remotes"])))
    if pos != len(body):
        raise ModelFormatError("trailing bytes after model blocks")
    return models


def save_model(models: SnnModel | Sequence[SnnModel], path: str | Path) -> None:
    if isinstance(models, SnnModel):
        models = [models]
    Path(path).write_bytes(dumps(models))


def load_model(path: str | Path, input_width: int | None = None) -> list[SnnModel]:
    return loads(Path(path).read_bytes(), input_width)
