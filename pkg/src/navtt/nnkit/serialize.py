"""Shared parameter-container format (npz + JSON metadata).

Used by policy checkpoints, classifier model files, and encoded-tensor
dumps so every artifact round-trips through one loader.
"""

import json

import numpy as np

FORMAT_VERSION = 1


def save_params(path, arrays, meta=None):
    """Write named arrays plus a JSON metadata block to an .npz container."""
    meta = dict(meta or {})
    meta["format_version"] = FORMAT_VERSION
    payload = {f"arr/{k}": np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_params(path):
    """Read back (arrays, meta) written by save_params."""
    with np.load(path) as archive:
        raw = archive["__meta__"].tobytes().decode("utf-8")
        meta = json.loads(raw)
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported container version {meta.get('format_version')!r} in {path}"
            )
        arrays = {
            k[4:]: archive[k] for k in archive.files if k.startswith("arr/")
        }
    return arrays, meta
