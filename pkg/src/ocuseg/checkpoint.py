"""Checkpoint container: header.json + weights.bin.

``header.json`` holds {format_version, config, arch_hash, config_hash,
tensors: [{name, shape, byte_offset}]}; ``weights.bin`` is the tensors'
float64 data, little-endian, concatenated in index order.  Writes are
byte-deterministic.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import RunConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(directory: str | Path, config: RunConfig,
                    tensors: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": json.loads(config.to_json()),
        "arch_hash": config.arch_hash(),
        "config_hash": config.content_hash(),
        "tensors": index,
    }
    (directory / "header.json").write_text(
        json.dumps(header, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (directory / "weights.bin").write_bytes(b"".join(blobs))


def load_checkpoint(directory: str | Path) -> tuple[RunConfig, dict[str, np.ndarray]]:
    directory = Path(directory)
    header_path = directory / "header.json"
    weights_path = directory / "weights.bin"
    for p in (header_path, weights_path):
        if not p.exists():
            raise CheckpointError(f"missing checkpoint file: {p}")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
    config = RunConfig.from_json(json.dumps(header["config"]))
    raw = weights_path.read_bytes()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = entry["byte_offset"]
        try:
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        except ValueError:
            raise CheckpointError(
                f"truncated weights for tensor {entry['name']!r}") from None
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return config, tensors
