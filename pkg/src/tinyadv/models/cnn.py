"""Small residual CNN counterpart to the tiny transformer."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .base import DifferentiableClassifier, ImageBatch


@dataclass(frozen=True)
class TinyCnnConfig:
    image_size: int = 16
    in_channels: int = 1
    width: int = 16
    blocks: int = 2
    num_classes: int = 2


class _ResidualBlock(nn.Module):
    # Pre-activation layout; GroupNorm keeps samples independent of their
    # batch company in both train and eval mode.
    def __init__(self, width: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(1, width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.relu(self.norm1(x)))
        h = self.conv2(F.relu(self.norm2(h)))
        return x + h


class TinyCNN(DifferentiableClassifier):
    """Conv stem, residual trunk, global average pool, linear head."""

    def __init__(self, cfg: TinyCnnConfig, seed: int | None = None):
        arch = {"kind": "tiny_cnn", "config": asdict(cfg)}
        if seed is not None:
            arch["seed"] = seed
        shape = (cfg.in_channels, cfg.image_size, cfg.image_size)
        super().__init__(arch, shape, cfg.num_classes)
        self.cfg = cfg
        self.stem = nn.Conv2d(cfg.in_channels, cfg.width, 3, padding=1)
        self.trunk = nn.Sequential(*[_ResidualBlock(cfg.width) for _ in range(cfg.blocks)])
        self.head = nn.Linear(cfg.width, cfg.num_classes)

    def forward(self, x: ImageBatch) -> torch.Tensor:
        h = self.trunk(self.stem(x))
        h = F.relu(h).mean(dim=(2, 3))
        return self.head(h)


def build_tiny_cnn(cfg: TinyCnnConfig | None = None, seed: int = 0, **overrides) -> TinyCNN:
    """Construct a TinyCNN with deterministic initialization for the seed."""
    if cfg is None:
        cfg = TinyCnnConfig(**overrides)
    elif overrides:
        cfg = TinyCnnConfig(**{**asdict(cfg), **overrides})
    torch.manual_seed(seed)
    return TinyCNN(cfg, seed=seed)
