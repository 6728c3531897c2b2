"""Bit-exact checkpoint files: a JSON header plus little-endian float64 blobs."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"RPCK"
VERSION = 1


@dataclass
class Checkpoint:
    architecture: str
    stage: str
    theta: dict[str, np.ndarray]  # "layer03.W" -> array
    scores: dict[str, np.ndarray] = field(default_factory=dict)
    mask: dict[str, np.ndarray] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    config_digest: str = ""
    version: int = VERSION


def _manifest(groups):
    out = []
    for group, arrays in groups:
        for name in sorted(arrays):
            out.append({"group": group, "name": name,
                        "shape": list(arrays[name].shape)})
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    groups = [("theta", ckpt.theta), ("scores", ckpt.scores), ("mask", ckpt.mask)]
    header = {
        "version": ckpt.version,
        "architecture": ckpt.architecture,
        "stage": ckpt.stage,
        "seeds": ckpt.seeds,
        "config_digest": ckpt.config_digest,
        "arrays": _manifest(groups),
    }
    raw_header = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(raw_header)))
        f.write(raw_header)
        for _, arrays in groups:
            for name in sorted(arrays):
                f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected_digest: str | None = None) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated at byte {len(raw)}")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    try:
        header = json.loads(raw[12:12 + header_len])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt header: {e}") from None
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")

    groups: dict[str, dict[str, np.ndarray]] = {"theta": {}, "scores": {}, "mask": {}}
    offset = 12 + header_len
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload at byte {offset}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").astype(
            np.float64).reshape(entry["shape"])
        groups[entry["group"]][entry["name"]] = arr
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes at byte {offset}")

    if expected_digest and header.get("config_digest") and \
            header["config_digest"] != expected_digest:
        warnings.warn(
            f"{path}: checkpoint config digest {header['config_digest'][:12]} "
            f"does not match the current config {expected_digest[:12]}",
            stacklevel=2,
        )
    return Checkpoint(
        architecture=header["architecture"],
        stage=header["stage"],
        theta=groups["theta"],
        scores=groups["scores"],
        mask=groups["mask"],
        seeds={k: int(v) for k, v in header.get("seeds", {}).items()},
        config_digest=header.get("config_digest", ""),
        version=header["version"],
    )


# helpers to move parameters between networks and checkpoints

def network_state(net) -> dict[str, np.ndarray]:
    return {f"layer{i:02d}.{name}": t.array.copy()
            for i, name, t in net.parameters()}


def load_network_state(net, state: dict[str, np.ndarray]) -> None:
    for i, name, t in net.parameters():
        key = f"layer{i:02d}.{name}"
        if key not in state:
            raise FormatError(f"checkpoint is missing parameter {key}")
        if state[key].shape != t.array.shape:
            raise FormatError(
                f"{key}: checkpoint shape {state[key].shape} != {t.array.shape}")
        t.array[...] = state[key]
