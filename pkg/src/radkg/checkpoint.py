"""Checkpoint container: magic, version, JSON header, float32 payload.

Layout: `VKG1` magic, little-endian u32 version, u32 header length,
UTF-8 JSON header, then each tensor as little-endian float32 in header
order. Arrays are written in sorted name order with explicit byte
offsets, so identical inputs always produce identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from typing import Dict, Optional, Tuple

import numpy as np

from radkg.errors import ConfigError
from radkg.model.lm import LmConfig, LmParams, init_lm
from radkg.model.projector import ProjectorConfig, ProjectorParams, init_projector

MAGIC = b"VKG1"
VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray], configs: dict) -> None:
    names = sorted(arrays)
    entries = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64).astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = json.dumps(
        {"configs": configs, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ConfigError(f"{path}: bad magic {magic!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise ConfigError(
                f"{path}: payload truncated for tensor {entry['name']!r}"
            )
        raw = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = raw.astype(np.float64).reshape(shape)
    return arrays, header["configs"]


def models_to_arrays(
    lm: LmParams, proj: Optional[ProjectorParams] = None
) -> Tuple[Dict[str, np.ndarray], dict]:
    arrays = {f"lm.{name}": t.data for name, t in lm.ps.items()}
    configs: dict = {"lm": asdict(lm.cfg), "projector": None}
    if proj is not None:
        arrays.update({f"projector.{name}": t.data for name, t in proj.ps.items()})
        configs["projector"] = asdict(proj.cfg)
    return arrays, configs


def save_models(path, lm: LmParams, proj: Optional[ProjectorParams] = None, extra: Optional[dict] = None) -> None:
    arrays, configs = models_to_arrays(lm, proj)
    if extra:
        configs["extra"] = extra
    save_checkpoint(path, arrays, configs)


def load_models(path) -> Tuple[LmParams, Optional[ProjectorParams], dict]:
    """Rebuild models from a checkpoint; weights are float32-rounded."""
    arrays, configs = load_checkpoint(path)
    lm_cfg = LmConfig(**configs["lm"])
    lm = init_lm(lm_cfg)
    lm.ps.load_arrays(
        {name[3:]: arr for name, arr in arrays.items() if name.startswith("lm.")}
    )
    proj = None
    if configs.get("projector") is not None:
        proj_cfg = ProjectorConfig(**configs["projector"])
        proj = init_projector(proj_cfg)
        proj.ps.load_arrays(
            {
                name[len("projector.") :]: arr
                for name, arr in arrays.items()
                if name.startswith("projector.")
            }
        )
    return lm, proj, configs
