"""Deterministic supervised training for the tiny models."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .base import DifferentiableClassifier, ImageBatch, LabelBatch


def train_classifier(
    model: DifferentiableClassifier,
    images: ImageBatch,
    labels: LabelBatch,
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    val_images: ImageBatch | None = None,
    val_labels: LabelBatch | None = None,
) -> list[dict]:
    """Adam on cross-entropy with seeded shuffling.

    Same model init, data and seed give bit-identical final weights on a
    given platform. Returns one history row per epoch.
    """
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = images.shape[0]
    history = []
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = images[idx], labels[idx]
            opt.zero_grad()
            loss = F.cross_entropy(model(xb), yb)
            loss.backward()
            opt.step()
            total_loss += loss.item() * idx.shape[0]
        model.eval()
        row = {"epoch": epoch, "loss": total_loss / n, "train_acc": model.accuracy(images, labels)}
        if val_images is not None:
            row["val_acc"] = model.accuracy(val_images, val_labels)
        history.append(row)
    model.eval()
    return history
