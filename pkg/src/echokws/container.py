"""On-disk formats shared across modules.

Tensor container (echo profiles, feature matrices), little-endian::

    magic      4s   b"EKTF"
    version    u32  1
    ndim       u32
    dims       u32 * ndim
    window     i32 * 2      (min_shift, max_shift) or (0, rows - 1)
    period     f64          frame period in seconds
    values     f32 * prod(dims), row-major

Weights container (classifier weights, fusion parameters, MLP fusion)::

    magic      4s   b"EKWB"
    meta_len   u64
    meta       utf-8 JSON, keys sorted; lists tensors as {name, shape, offset}
    blob       f32 little-endian, tensors concatenated in metadata order
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

TENSOR_MAGIC = b"EKTF"
TENSOR_VERSION = 1
WEIGHTS_MAGIC = b"EKWB"
WEIGHTS_VERSION = 1


class ContainerError(ValueError):
    pass


def write_tensor(path, values: np.ndarray, window: tuple[int, int], period: float) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    head = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, values.ndim)
    head += struct.pack(f"<{values.ndim}I", *values.shape)
    head += struct.pack("<iid", int(window[0]), int(window[1]), float(period))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(values.tobytes())


def read_tensor(path) -> tuple[np.ndarray, tuple[int, int], float]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != TENSOR_MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != TENSOR_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    pos = 12
    dims = struct.unpack_from(f"<{ndim}I", raw, pos)
    pos += 4 * ndim
    lo, hi, period = struct.unpack_from("<iid", raw, pos)
    pos += 16
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - pos != 4 * count:
        raise ContainerError(f"{path}: expected {4 * count} value bytes, found {len(raw) - pos}")
    values = np.frombuffer(raw, dtype="<f4", offset=pos).reshape(dims)
    return values.astype(np.float64), (lo, hi), period


def write_weights(path, meta: dict, tensors: "OrderedDict[str, np.ndarray]") -> None:
    """Serialize named float tensors plus JSON metadata to one file."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    doc = dict(meta)
    doc["format_version"] = WEIGHTS_VERSION
    doc["tensors"] = entries
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC + struct.pack("<Q", len(text)))
        fh.write(text)
        for b in blobs:
            fh.write(b)


def read_weights(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise ContainerError(f"{path}: bad magic {raw[:4]!r}")
    (n,) = struct.unpack_from("<Q", raw, 4)
    meta = json.loads(raw[12:12 + n].decode("utf-8"))
    if meta.get("format_version") != WEIGHTS_VERSION:
        raise ContainerError(f"{path}: unsupported format version {meta.get('format_version')}")
    blob = np.frombuffer(raw, dtype="<f4", offset=12 + n)
    tensors = OrderedDict()
    for e in meta.pop("tensors"):
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        chunk = blob[e["offset"]:e["offset"] + size]
        if chunk.size != size:
            raise ContainerError(f"{path}: tensor {e['name']} truncated")
        tensors[e["name"]] = chunk.reshape(e["shape"]).astype(np.float32)
    return meta, tensors
