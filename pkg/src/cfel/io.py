"""Metric streams and parameter checkpoints."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"CFEL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")   # magic, version, d: 16 bytes


def write_csv(records, path) -> None:
    from .engine import RoundRecord
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RoundRecord.FIELDS)
        for rec in records:
            writer.writerow([repr(v) for v in (getattr(rec, f) for f in RoundRecord.FIELDS)])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.as_dict(), allow_nan=True) + "\n")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_checkpoint(params, path) -> None:
    """Flat little-endian float64 vector after a 16-byte header."""
    vec = np.ascontiguousarray(params, dtype="<f8").ravel()
    Path(path).write_bytes(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, vec.size) + vec.tobytes())


def read_checkpoint(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("checkpoint shorter than its header")
    magic, version, d = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(raw) != _HEADER.size + 8 * d:
        raise FormatError(f"checkpoint payload does not hold {d} float64 values")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
