"""Model checkpoint container.

A checkpoint is a single binary file: a magic line, an 8-byte little-endian
header length, a JSON header (model config, node labels, config echo, and a
slot table with shapes and payload offsets), then the raw little-endian
float64 row-major payloads.  Writing the same model twice produces identical
bytes, and a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import Model, ModelConfig, parameter_shapes
from .numeric import ParameterStore
from .version import TOOL_VERSION

MAGIC = b"TOPOLSTM-CKPT-1\n"


def save_model(path, model: Model, labels: tuple[str, ...],
               extra: dict | None = None) -> None:
    """Write model parameters, node labels, and a config echo to ``path``."""
    if len(labels) != model.config.node_count:
        raise CheckpointError(
            f"{len(labels)} labels for a model over {model.config.node_count} nodes")
    slots = []
    payloads = []
    offset = 0
    for name, arr in model.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        slots.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)
    header = {
        "format": 1,
        "tool_version": TOOL_VERSION,
        "config": {
            "hidden_dim": model.config.hidden_dim,
            "node_count": model.config.node_count,
            "score_mode": model.config.score_mode,
        },
        "labels": list(labels),
        "extra": extra or {},
        "slots": slots,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for data in payloads:
            fh.write(data)


def load_model(path) -> tuple[Model, tuple[str, ...], dict]:
    """Read a checkpoint; returns (model, labels, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()

    cfg = header.get("config", {})
    try:
        config = ModelConfig(hidden_dim=int(cfg["hidden_dim"]),
                             node_count=int(cfg["node_count"]),
                             score_mode=str(cfg["score_mode"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config in header: {exc}") from None

    expected = parameter_shapes(config)
    slots: dict[str, np.ndarray] = {}
    for entry in header["slots"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(
                f"{path}: slot {name!r} has shape {shape}, expected {expected.get(name)}")
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start:start + nbytes], dtype="<f8").copy()
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: slot {name!r} payload truncated")
        slots[name] = arr.reshape(shape)
    if set(slots) != set(expected):
        missing = sorted(set(expected) - set(slots))
        raise CheckpointError(f"{path}: missing slots {missing}")

    labels = tuple(header.get("labels", ()))
    if len(labels) != config.node_count:
        raise CheckpointError(f"{path}: label table does not match node count")
    return Model(config, ParameterStore(slots)), labels, header
