"""Checkpoint directory: ``manifest.json`` plus one little-endian float64 blob per tensor."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import InputError
from .model import DenoiserParams, ModelConfig, param_shapes

FORMAT = "asag-checkpoint"
VERSION = 1
_DTYPE = "<f8"


def save_checkpoint(path, params: DenoiserParams, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype=_DTYPE)
        fname = name + ".bin"
        (path / fname).write_bytes(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": _DTYPE, "file": fname})
    manifest = {"format": FORMAT, "version": VERSION, "model": asdict(params.config),
                "tensors": entries, "metadata": metadata or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise InputError(f"no checkpoint manifest in {path}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path / 'manifest.json'}: invalid JSON at line {e.lineno}") from None
    if manifest.get("format") != FORMAT:
        raise InputError(f"{path} is not a checkpoint directory")
    if manifest.get("version") != VERSION:
        raise InputError(f"unsupported checkpoint version {manifest.get('version')}")
    return manifest


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[DenoiserParams, dict]:
    """Load every tensor; with ``expected``, shapes must match that configuration."""
    path = Path(path)
    manifest = read_manifest(path)
    cfg = ModelConfig(**manifest["model"])
    stored = {e["name"]: tuple(e["shape"]) for e in manifest["tensors"]}
    want = param_shapes(expected if expected is not None else cfg)
    bad = sorted(n for n in set(want) | set(stored) if want.get(n) != stored.get(n))
    if bad:
        detail = ", ".join(f"{n} (checkpoint {stored.get(n)}, expected {want.get(n)})" for n in bad)
        raise InputError(f"checkpoint {path} is incompatible: {detail}")
    tensors = {}
    for e in manifest["tensors"]:
        raw = (path / e["file"]).read_bytes()
        count = int(np.prod(e["shape"], dtype=np.int64))
        if len(raw) != 8 * count:
            raise InputError(f"{path / e['file']}: expected {8 * count} bytes, found {len(raw)}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=e.get("dtype", _DTYPE)).astype(np.float64).reshape(e["shape"])
    return DenoiserParams(expected or cfg, tensors), manifest
