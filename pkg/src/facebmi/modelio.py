"""``.bmimodel`` container: JSON header followed by a float64 payload.

Layout::

    b"BMIMODEL"             8-byte magic
    uint64 little-endian    header length in bytes
    header                  UTF-8 JSON {type, backbone_id, dim, hyperparams,
                            checksum, arrays: [{name, shape, offset}], extra}
    payload                 concatenated little-endian float64 arrays

``checksum`` is the sha256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ModelFormatError

MAGIC = b"BMIMODEL"
SUFFIX = ".bmimodel"
_F8 = np.dtype("<f8")


def save_model(
    path: str | Path,
    model_type: str,
    arrays: dict[str, np.ndarray],
    *,
    backbone_id: str | None = None,
    dim: int | None = None,
    hyperparams: dict | None = None,
    extra: dict | None = None,
) -> str:
    """Write a model file and return the payload checksum."""
    chunks, layout, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError(f"array {name!r} has non-finite entries")
        raw = np.ascontiguousarray(arr, dtype=_F8).tobytes()
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    checksum = hashlib.sha256(payload).hexdigest()
    header = {
        "type": model_type,
        "backbone_id": backbone_id,
        "dim": dim,
        "hyperparams": hyperparams or {},
        "checksum": checksum,
        "arrays": layout,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)
    return checksum


def load_model(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a model file; returns ``(header, arrays)`` after verifying the checksum."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from exc
    if data[:8] != MAGIC or len(data) < 16:
        raise ModelFormatError(f"{path} is not a .bmimodel file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt header in {path}") from exc
    payload = data[16 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header.get("checksum"):
        raise ModelFormatError(f"payload checksum mismatch in {path}")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_F8, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def peek_type(path: str | Path) -> str:
    header, _ = load_model(path)
    return header["type"]
