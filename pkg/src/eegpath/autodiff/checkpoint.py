"""Checkpoints: a JSON descriptor plus a flat little-endian float64 blob.

``<stem>.json`` holds the architecture hyperparameters and, for each
named array, its shape and byte offset into ``<stem>.bin``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "eegpath-checkpoint/1"


def save(stem, arrays: dict, descriptor: dict) -> tuple[Path, Path]:
    stem = Path(stem)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    meta = {"format": FORMAT, "dtype": "<f8", "arrays": entries, "descriptor": descriptor}
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    bin_path.write_bytes(b"".join(blobs))
    json_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return json_path, bin_path


def load(stem) -> tuple[dict, dict]:
    """Return (arrays, descriptor)."""
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    if meta.get("format") != FORMAT:
        raise ValueError(f"{stem}: unknown checkpoint format {meta.get('format')!r}")
    buf = stem.with_suffix(".bin").read_bytes()
    arrays = {}
    for e in meta["arrays"]:
        count = int(np.prod(e["shape"]))
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8", count=count,
                                          offset=e["offset"]).reshape(e["shape"]).copy()
    return arrays, meta["descriptor"]
