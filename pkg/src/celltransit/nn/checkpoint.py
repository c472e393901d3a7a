"""Weight file format: JSON header + raw little-endian float64 blobs.

Layout: 4-byte little-endian header length, UTF-8 JSON header, then the
concatenated tensor data.  The header carries a format version and, per
tensor, its name, shape, and byte offset into the data section.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from celltransit.errors import CheckpointError

FORMAT_VERSION = 1


def save_weights(path, arrays: dict):
    """Write named arrays (any float dtype; stored as little-endian f8)."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape),
                        "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"version": FORMAT_VERSION, "tensors": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_weights(path, expected_shapes: dict | None = None) -> dict:
    """Read a weight file back into {name: float64 array}.

    When ``expected_shapes`` is given, every mismatch is collected and
    reported in one CheckpointError.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated weight file")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4:4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version "
                              f"{header.get('version')}")
    data = raw[4 + hlen:]
    out = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count,
                            offset=start).reshape(shape)
        out[entry["name"]] = arr.astype(np.float64)
    if expected_shapes is not None:
        mismatches = []
        for name, shape in expected_shapes.items():
            if name not in out:
                mismatches.append(f"missing '{name}' (want {tuple(shape)})")
            elif out[name].shape != tuple(shape):
                mismatches.append(f"'{name}': file {out[name].shape} != "
                                  f"model {tuple(shape)}")
        for name in out:
            if name not in expected_shapes:
                mismatches.append(f"unexpected tensor '{name}'")
        if mismatches:
            raise CheckpointError(f"{path}: incompatible checkpoint: "
                                  + "; ".join(mismatches))
    return out
