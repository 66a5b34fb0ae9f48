"""Synthetic two-class oriented-stripe images and dataset file I/O."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch


def make_stripes(
    n: int,
    image_size: int = 16,
    channels: int = 1,
    amplitude: float = 0.25,
    noise: float = 0.12,
    seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Sinusoidal gratings: class 0 varies along rows, class 1 along columns.

    Frequency and phase are drawn per image, pixel noise is added, and the
    result is clipped to [0, 1]. Labels are balanced by construction.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    coords = np.arange(image_size, dtype=np.float64)
    images = np.empty((n, channels, image_size, image_size), dtype=np.float64)
    for i in range(n):
        freq = rng.uniform(1.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(2.0 * np.pi * freq * coords / image_size + phase)
        if labels[i] == 0:
            plane = np.tile(wave[:, None], (1, image_size))  # stripes across rows
        else:
            plane = np.tile(wave[None, :], (image_size, 1))  # stripes across columns
        img = 0.5 + amplitude * plane
        img = img[None, :, :] + rng.normal(0.0, noise, size=(channels, image_size, image_size))
        images[i] = np.clip(img, 0.0, 1.0)
    x = torch.from_numpy(images.astype(np.float32))
    y = torch.from_numpy(labels.astype(np.int64))
    return x, y


def save_dataset(images: torch.Tensor, labels: torch.Tensor, stem: str | Path) -> None:
    """Write a raw little-endian float32 pixel blob plus a JSON manifest."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = images.detach().cpu().numpy().astype("<f4")
    blob.tofile(stem.with_suffix(".data.bin"))
    manifest = {
        "version": 1,
        "dtype": "float32-le",
        "shape": list(images.shape),
        "labels": [int(v) for v in labels.tolist()],
    }
    stem.with_suffix(".data.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def load_dataset(stem: str | Path) -> tuple[torch.Tensor, torch.Tensor]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".data.json").read_text())
    shape = tuple(manifest["shape"])
    raw = np.fromfile(stem.with_suffix(".data.bin"), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError("dataset blob does not match manifest shape")
    images = torch.from_numpy(raw.reshape(shape).copy())
    labels = torch.tensor(manifest["labels"], dtype=torch.int64)
    return images, labels
