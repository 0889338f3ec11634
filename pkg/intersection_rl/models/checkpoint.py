"""
Network Checkpoints
====================
Binary little-endian layout::

    b"APGN" | uint32 version | uint32 header_bytes | JSON header | float64 parameters

The JSON header lists each network (name, spec, init seed, size) in storage
order plus the training iteration; the parameters of all networks follow
back to back.

Usage::

    save_checkpoint("runs/apg/checkpoint_1000.apgn", {"policy": policy, "value": value}, 1000)
    ckpt = load_checkpoint("runs/apg/checkpoint_1000.apgn")
    policy = ckpt.networks["policy"]
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from intersection_rl.errors import CheckpointError
from intersection_rl.models.networks import MLP, MLPSpec, ParameterVector

logger = logging.getLogger(__name__)

MAGIC = b"APGN"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    iteration: int
    networks: dict[str, MLP]
    extra: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    networks: dict[str, MLP],
    iteration: int,
    extra: dict[str, Any] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vectors = {name: net.parameter_vector() for name, net in networks.items()}
    header = {
        "iteration": int(iteration),
        "networks": [
            {"name": name, "spec": networks[name].spec.to_dict(), "seed": vec.seed, "size": int(vec.values.size)}
            for name, vec in vectors.items()
        ],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([vec.values for vec in vectors.values()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())
    logger.debug("Checkpoint saved → %s", path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"Checkpoint not found: '{path}'. Run `python -m intersection_rl train` first."
        )
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(raw[_PREFIX.size: _PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc

    start = _PREFIX.size + header_len
    if start > len(raw) or (len(raw) - start) % 8:
        raise CheckpointError(f"{path}: payload of {len(raw) - start} bytes is not a whole number of float64 values")
    payload = np.frombuffer(raw, dtype="<f8", offset=start)
    expected = sum(entry["size"] for entry in header["networks"])
    if payload.size != expected:
        raise CheckpointError(f"{path}: {payload.size} parameters stored, header declares {expected}")

    networks: dict[str, MLP] = {}
    offset = 0
    for entry in header["networks"]:
        spec = MLPSpec.from_dict(entry["spec"])
        values = payload[offset: offset + entry["size"]].astype(np.float64)
        offset += entry["size"]
        networks[entry["name"]] = MLP(spec, ParameterVector(values, tuple(spec.layer_shapes), entry["seed"]))
    return Checkpoint(int(header["iteration"]), networks, header.get("extra", {}))
