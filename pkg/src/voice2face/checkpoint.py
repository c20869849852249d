"""Versioned checkpoint container with bit-exact round trips.

Layout: magic, format version, header length, JSON header (architecture,
iteration, blob directory, optional extras), then raw little-endian
float32 blobs. Parameters and batch-norm running statistics are stored by
name.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from voice2face.errors import CheckpointError
from voice2face.networks import ArchConfig, ModelBundle

MAGIC = b"V2FCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_checkpoint(path, bundle: ModelBundle, extras: dict | None = None):
    blobs = []
    directory = []
    offset = 0
    for name, p in bundle.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(p.data.shape),
                          "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    for name, b in bundle.named_buffers():
        raw = np.ascontiguousarray(b, dtype="<f4").tobytes()
        directory.append({"name": f"buffer.{name}", "shape": list(b.shape),
                          "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "arch": bundle.arch.to_dict(),
        "iteration": bundle.iteration,
        "blobs": directory,
        "extras": extras or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def _read_header(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        if len(prefix) != _PREFIX.size:
            raise CheckpointError(f"checkpoint {path}: truncated prefix")
        magic, version, header_len = _PREFIX.unpack(prefix)
        if magic != MAGIC:
            raise CheckpointError(f"checkpoint {path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint {path}: format version {version}, expected {FORMAT_VERSION}"
            )
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"checkpoint {path}: corrupt header ({e})") from e
    return header, _PREFIX.size + header_len


def read_header(path) -> dict:
    return _read_header(path)[0]


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    """Rebuild the bundle and return (bundle, extras)."""
    header, data_start = _read_header(path)
    arch = ArchConfig(**header["arch"])
    bundle = ModelBundle.build(arch, seed=0)
    bundle.iteration = int(header["iteration"])

    params = dict(bundle.named_parameters())
    buffers = dict(bundle.named_buffers())
    with open(path, "rb") as fh:
        fh.seek(data_start)
        payload = fh.read()

    seen = set()
    for entry in header["blobs"]:
        name = entry["name"]
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"checkpoint {path}: blob {name} truncated")
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        if name.startswith("buffer."):
            target = buffers.get(name[len("buffer."):])
            if target is None:
                raise CheckpointError(f"checkpoint {path}: unknown buffer {name}")
            target[...] = arr
        else:
            target = params.get(name)
            if target is None:
                raise CheckpointError(f"checkpoint {path}: unknown parameter {name}")
            if tuple(target.data.shape) != tuple(entry["shape"]):
                raise CheckpointError(
                    f"checkpoint {path}: parameter {name} has shape {entry['shape']}, "
                    f"expected {tuple(target.data.shape)}"
                )
            target.data = arr.astype(np.float32).copy()
        seen.add(name)
    missing = (set(params) | {f"buffer.{n}" for n in buffers}) - seen
    if missing:
        raise CheckpointError(f"checkpoint {path}: missing blobs {sorted(missing)[:4]}")
    return bundle, header.get("extras", {})
