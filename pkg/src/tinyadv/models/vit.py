"""Tiny vision transformer sized for desk-scale robustness experiments."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .base import DifferentiableClassifier, ImageBatch


@dataclass(frozen=True)
class TinyViTConfig:
    image_size: int = 16
    patch_size: int = 4
    in_channels: int = 1
    embed_dim: int = 32
    depth: int = 2
    num_heads: int = 2
    mlp_width: int = 64
    num_classes: int = 2
    # Encoder norm flavor: "layer" is standard practice, "batch" applies
    # feature-wise batchnorm per token (running stats at eval time, so single
    # samples see no batch coupling at attack time).
    norm_kind: str = "layer"

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.norm_kind not in ("layer", "batch"):
            raise ValueError("norm_kind must be 'layer' or 'batch'")

    @property
    def grid(self) -> tuple[int, int]:
        side = self.image_size // self.patch_size
        return (side, side)

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw


@dataclass
class AttentionTrace:
    """Per-layer softmax attention matrices recorded during a forward pass.

    Each entry has shape (batch, heads, tokens, tokens) with row-stochastic
    rows; token 0 is the class token, the rest follow patch raster order.
    """

    layers: list[torch.Tensor] = field(default_factory=list)
    patch_grid: tuple[int, int] = (0, 0)

    @property
    def num_tokens(self) -> int:
        return self.layers[0].shape[-1] if self.layers else 0


class _TokenBatchNorm(nn.Module):
    """BatchNorm1d over the embedding axis of a (B, T, E) token stack."""

    def __init__(self, dim: int):
        super().__init__()
        self.bn = nn.BatchNorm1d(dim)

    def forward(self, x):
        return self.bn(x.transpose(1, 2)).transpose(1, 2)


def _make_norm(kind: str, dim: int) -> nn.Module:
    return nn.LayerNorm(dim) if kind == "layer" else _TokenBatchNorm(dim)


class _SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, trace: list | None = None):
        b, t, e = x.shape
        h, d = self.num_heads, self.head_dim

        def split(proj):
            return proj(x).reshape(b, t, h, d).transpose(1, 2)  # (B, h, T, d)

        q, k, v = split(self.q), split(self.k), split(self.v)
        # Raw dot-product scores, softmaxed without sqrt(d) scaling; the head
        # count divides the value mix after the softmax.
        att = torch.softmax(q @ k.transpose(-2, -1), dim=-1)
        if trace is not None:
            trace.append(att.detach())
        mixed = (att / h) @ v
        mixed = mixed.transpose(1, 2).reshape(b, t, e)
        return self.out(mixed)


class _EncoderBlock(nn.Module):
    def __init__(self, cfg: TinyViTConfig):
        super().__init__()
        self.norm1 = _make_norm(cfg.norm_kind, cfg.embed_dim)
        self.attn = _SelfAttention(cfg.embed_dim, cfg.num_heads)
        self.norm2 = _make_norm(cfg.norm_kind, cfg.embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.mlp_width),
            nn.GELU(),
            nn.Linear(cfg.mlp_width, cfg.embed_dim),
        )

    def forward(self, x, trace: list | None = None):
        x = x + self.attn(self.norm1(x), trace)
        x = x + self.mlp(self.norm2(x))
        return x


class TinyViT(DifferentiableClassifier):
    """Patch-embedding transformer with a class token read by a linear head."""

    def __init__(self, cfg: TinyViTConfig, seed: int | None = None):
        arch = {"kind": "tiny_vit", "config": asdict(cfg)}
        if seed is not None:
            arch["seed"] = seed
        shape = (cfg.in_channels, cfg.image_size, cfg.image_size)
        super().__init__(arch, shape, cfg.num_classes)
        self.cfg = cfg

        patch_dim = cfg.patch_size * cfg.patch_size * cfg.in_channels
        self.patch_embed = nn.Linear(patch_dim, cfg.embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(_EncoderBlock(cfg) for _ in range(cfg.depth))
        self.final_norm = _make_norm(cfg.norm_kind, cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.num_classes)

        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)

    def _patchify(self, x: ImageBatch) -> torch.Tensor:
        p = self.cfg.patch_size
        b, c, hh, ww = x.shape
        # (B, C, gh, gw, p, p) -> (B, gh*gw, p*p*C) in raster order
        patches = x.unfold(2, p, p).unfold(3, p, p)
        patches = patches.permute(0, 2, 3, 1, 4, 5).reshape(b, self.cfg.num_patches, -1)
        return patches

    def _encode(self, x: ImageBatch, trace: list | None = None) -> torch.Tensor:
        tokens = self.patch_embed(self._patchify(x))
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        tokens = torch.cat([cls, tokens], dim=1) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens, trace)
        return self.final_norm(tokens)

    def forward(self, x: ImageBatch) -> torch.Tensor:
        return self.head(self._encode(x)[:, 0])

    def forward_with_attention(self, x: ImageBatch) -> tuple[torch.Tensor, AttentionTrace]:
        layers: list[torch.Tensor] = []
        logits = self.head(self._encode(x, layers)[:, 0])
        return logits, AttentionTrace(layers=layers, patch_grid=self.cfg.grid)


def collect_attention(model: TinyViT, x: ImageBatch) -> AttentionTrace:
    """Record the softmax attention matrices of every layer, gradient-free."""
    if not isinstance(model, TinyViT):
        raise TypeError("attention traces are only defined for TinyViT models")
    with torch.no_grad():
        _, trace = model.forward_with_attention(x)
    return trace


def build_tiny_vit(cfg: TinyViTConfig | None = None, seed: int = 0, **overrides) -> TinyViT:
    """Construct a TinyViT with deterministic initialization for the seed."""
    if cfg is None:
        cfg = TinyViTConfig(**overrides)
    elif overrides:
        cfg = TinyViTConfig(**{**asdict(cfg), **overrides})
    torch.manual_seed(seed)
    return TinyViT(cfg, seed=seed)
