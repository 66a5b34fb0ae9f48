"""Weight persistence: raw float32 blob + JSON manifest per model."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .base import DifferentiableClassifier
from .cnn import TinyCNN, TinyCnnConfig
from .vit import TinyViT, TinyViTConfig

FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    """Manifest/blob pair is unreadable or does not fit the target model."""


def _blob_path(stem: str | Path) -> Path:
    return Path(str(stem) + ".weights.bin")


def _manifest_path(stem: str | Path) -> Path:
    return Path(str(stem) + ".manifest.json")


def save_weights(model: DifferentiableClassifier, stem: str | Path) -> None:
    """Write ``<stem>.weights.bin`` (little-endian float32) and ``<stem>.manifest.json``.

    Integer buffers (e.g. batchnorm step counters) are stored as float32 too;
    their values are small enough to survive the round trip exactly.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        flat = tensor.detach().cpu().numpy().astype("<f4").ravel()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks) if chunks else np.empty(0, dtype="<f4")
    blob.tofile(_blob_path(stem))
    manifest = {
        "version": FORMAT_VERSION,
        "dtype": "float32-le",
        "arch": model.arch,
        "params": entries,
        "total": int(offset),
    }
    _manifest_path(stem).write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _read_manifest(stem: str | Path) -> dict:
    path = _manifest_path(stem)
    if not path.exists():
        raise WeightFormatError(f"missing manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise WeightFormatError(f"corrupt manifest {path}: {err}") from err
    for key in ("version", "arch", "params", "total", "dtype"):
        if key not in manifest:
            raise WeightFormatError(f"manifest {path} lacks required key '{key}'")
    if manifest["dtype"] != "float32-le":
        raise WeightFormatError(f"unsupported blob dtype {manifest['dtype']}")
    return manifest


def _read_blob(stem: str | Path, manifest: dict) -> np.ndarray:
    path = _blob_path(stem)
    if not path.exists():
        raise WeightFormatError(f"missing weight blob {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != manifest["total"]:
        raise WeightFormatError(
            f"weight blob holds {raw.size} values, manifest promises {manifest['total']}"
        )
    return raw


def load_weights(model: DifferentiableClassifier, stem: str | Path) -> DifferentiableClassifier:
    """Load a saved blob into an existing model; errors on architecture mismatch."""
    manifest = _read_manifest(stem)
    saved_arch = {k: v for k, v in manifest["arch"].items() if k != "seed"}
    own_arch = {k: v for k, v in model.arch.items() if k != "seed"}
    if saved_arch != own_arch:
        raise WeightFormatError(
            f"saved architecture {saved_arch} does not match model {own_arch}"
        )
    raw = _read_blob(stem, manifest)
    state = model.state_dict()
    new_state = {}
    for entry in manifest["params"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in state:
            raise WeightFormatError(f"unknown parameter '{name}' in manifest")
        if tuple(state[name].shape) != shape:
            raise WeightFormatError(
                f"parameter '{name}' has shape {tuple(state[name].shape)}, manifest says {shape}"
            )
        numel = int(np.prod(shape)) if shape else 1
        chunk = raw[offset : offset + numel].reshape(shape)
        new_state[name] = torch.from_numpy(chunk.copy()).to(state[name].dtype)
    if set(new_state) != set(state):
        raise WeightFormatError("manifest does not cover the model's parameter set")
    model.load_state_dict(new_state)
    return model


def load_model(stem: str | Path) -> DifferentiableClassifier:
    """Rebuild the architecture named in the manifest, then load its weights."""
    manifest = _read_manifest(stem)
    arch = manifest["arch"]
    kind = arch.get("kind")
    if kind == "tiny_vit":
        model = TinyViT(TinyViTConfig(**arch["config"]), seed=arch.get("seed"))
    elif kind == "tiny_cnn":
        model = TinyCNN(TinyCnnConfig(**arch["config"]), seed=arch.get("seed"))
    else:
        raise WeightFormatError(f"unknown architecture kind {kind!r}")
    return load_weights(model, stem)
