"""Parameter maps, initialization and the binary checkpoint container.

Checkpoint layout::

    b"CTXADCKP"                  8-byte magic
    header_len                   uint64, little-endian
    header                       UTF-8 JSON: version, tensors[{name, shape, dtype, offset, nbytes}], meta
    buffers                      raw little-endian arrays, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .tensor import Tensor

ParameterSet = dict[str, Tensor]

MAGIC = b"CTXADCKP"
FORMAT_VERSION = 1


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float64) -> np.ndarray:
    """Draw from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    if fan_in <= 0 or any(s <= 0 for s in shape):
        raise ValueError(f"cannot initialize zero-size parameter of shape {shape}")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def clone_params(params: Mapping[str, Tensor]) -> ParameterSet:
    return {name: Tensor(p.data.copy(), requires_grad=p.requires_grad) for name, p in params.items()}


def cast_params(params: Mapping[str, Tensor], dtype) -> ParameterSet:
    return {name: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad) for name, p in params.items()}


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor], meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    buffers = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)}
        )
        buffers.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": FORMAT_VERSION, "tensors": entries, "meta": dict(meta or {})}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[ParameterSet, dict[str, Any]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    if "version" not in header:
        raise ValueError(f"{path}: checkpoint header has no version field")
    if header["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    base = 16 + header_len
    params: ParameterSet = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(blob[start : start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        params[entry["name"]] = Tensor(arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="), copy=True), requires_grad=True)
    return params, header.get("meta", {})
