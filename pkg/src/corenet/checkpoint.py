"""Self-describing binary checkpoints.

Layout::

    b"CORENETC" | u32 format version | u64 header length | JSON header | blob

The header (sorted-key JSON) records the configs, pass index, epoch,
validation SNR, seeds, optimizer step counts and an offsets table; the blob
holds every array as contiguous little-endian float32. Writing the same
state twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CORENETC"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f4")

GROUPS = ("ar", "mr", "ar_adam_m", "ar_adam_v", "mr_adam_m", "mr_adam_v")


class CheckpointError(ValueError):
    """Unreadable, truncated, corrupted or version-mismatched checkpoint."""


@dataclass
class Checkpoint:
    ar_config: dict
    mr_config: dict
    ar_params: dict[str, np.ndarray]
    mr_params: dict[str, np.ndarray]
    pass_index: int = 0
    epoch: int = 0
    val_snr_db: float = float("nan")
    master_seed: int = 0
    optimizer: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    optimizer_steps: dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def groups(self) -> dict[str, dict[str, np.ndarray]]:
        out = {"ar": self.ar_params, "mr": self.mr_params}
        for g in GROUPS[2:]:
            if g in self.optimizer:
                out[g] = self.optimizer[g]
        return out


def _encode(ckpt: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    for group, arrays in ckpt.groups().items():
        for name in sorted(arrays):
            raw = np.ascontiguousarray(arrays[name], dtype=_DTYPE).tobytes()
            table.append(
                {
                    "group": group,
                    "name": name,
                    "shape": list(np.shape(arrays[name])),
                    "offset": offset,
                    "nbytes": len(raw),
                    "crc32": zlib.crc32(raw),
                }
            )
            chunks.append(raw)
            offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "ar_config": ckpt.ar_config,
        "mr_config": ckpt.mr_config,
        "pass_index": int(ckpt.pass_index),
        "epoch": int(ckpt.epoch),
        # repr keeps the float exact through JSON
        "val_snr_db": repr(float(ckpt.val_snr_db)),
        "master_seed": int(ckpt.master_seed),
        "optimizer_steps": {k: int(v) for k, v in ckpt.optimizer_steps.items()},
        "meta": ckpt.meta,
        "tensors": table,
        "blob_size": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + blob


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Atomically write ``ckpt``; returns the file's sha256."""
    path = Path(path)
    data = _encode(ckpt)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: truncated preamble ({len(data)} bytes)")
    magic, version, hlen = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREAMBLE.size
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: header truncated at offset {len(data)} (needs {start + hlen})")
    try:
        header = json.loads(data[start : start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header at offset {start}: {exc}") from None
    blob_start = start + hlen
    blob = data[blob_start:]
    if len(blob) != header["blob_size"]:
        raise CheckpointError(
            f"{path}: blob is {len(blob)} bytes at offset {blob_start}, header says {header['blob_size']}"
        )
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CheckpointError(f"{path}: blob checksum mismatch; {_locate_damage(header, blob, blob_start)}")

    groups: dict[str, dict[str, np.ndarray]] = {}
    for entry in header["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE).reshape(entry["shape"]).astype(np.float32)
        groups.setdefault(entry["group"], {})[entry["name"]] = arr
    return Checkpoint(
        ar_config=header["ar_config"],
        mr_config=header["mr_config"],
        ar_params=groups.get("ar", {}),
        mr_params=groups.get("mr", {}),
        pass_index=header["pass_index"],
        epoch=header["epoch"],
        val_snr_db=float(header["val_snr_db"]),
        master_seed=header["master_seed"],
        optimizer={g: groups[g] for g in GROUPS[2:] if g in groups},
        optimizer_steps=header["optimizer_steps"],
        meta=header["meta"],
    )


def _locate_damage(header: dict, blob: bytes, blob_start: int) -> str:
    for entry in header["tensors"]:
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if zlib.crc32(raw) != entry["crc32"]:
            lo = blob_start + entry["offset"]
            return f"tensor {entry['group']}/{entry['name']} damaged in file bytes [{lo}, {lo + entry['nbytes']})"
    return "damage outside the tensor table"
