"""Model container: a zip archive with ``manifest.json`` plus raw parameter blobs.

Each blob is the little-endian float64 bytes of one named array; the manifest
records its shape and file name so a load reproduces it bit for bit.
"""
from __future__ import annotations

import json
import zipfile

import numpy as np

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def save_container(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for i, (name, arr) in enumerate(arrays.items()):
            fname = f"blobs/{i:04d}.f64"
            data = np.ascontiguousarray(arr, dtype="<f8")
            zf.writestr(fname, data.tobytes())
            entries.append({"name": name, "shape": list(data.shape), "file": fname, "dtype": "<f8"})
        doc = {"format_version": FORMAT_VERSION, **manifest, "arrays": entries}
        zf.writestr(MANIFEST, json.dumps(doc, indent=2, sort_keys=True))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read(MANIFEST))
        arrays = {}
        for entry in manifest.pop("arrays"):
            raw = zf.read(entry["file"])
            arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).astype(np.float64)
    return manifest, arrays
