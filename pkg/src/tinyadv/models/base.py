"""Classifier base type and gradient access used by every attack in the package."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# Batches are plain torch tensors: images are rank-4 (B, C, H, W) floats in
# [0, 1], labels are rank-1 integer class ids.
ImageBatch = torch.Tensor
LabelBatch = torch.Tensor


class DifferentiableClassifier(nn.Module):
    """Attackable classifier: float image batch in, logits out.

    Subclasses fill in ``forward``. The base carries the architecture
    descriptor used by weight persistence and a counter of gradient
    computations, which black-box evaluations use to prove the gradient
    pathway was never touched.
    """

    def __init__(self, arch: dict, input_shape: tuple[int, int, int], num_classes: int):
        super().__init__()
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.gradient_queries = 0

    def forward(self, x: ImageBatch) -> torch.Tensor:  # pragma: no cover - abstract
        raise NotImplementedError

    @torch.no_grad()
    def predict(self, x: ImageBatch) -> LabelBatch:
        """Hard labels (argmax of the logits). Never builds a graph."""
        return self.forward(x).argmax(dim=1)

    @torch.no_grad()
    def accuracy(self, x: ImageBatch, y: LabelBatch) -> float:
        return (self.predict(x) == y).float().mean().item()


def _check_batch(model: DifferentiableClassifier, x: ImageBatch, y: LabelBatch) -> None:
    if x.dim() != 4:
        raise ValueError(f"expected rank-4 image batch, got shape {tuple(x.shape)}")
    if tuple(x.shape[1:]) != model.input_shape:
        raise ValueError(
            f"image shape {tuple(x.shape[1:])} does not match model input {model.input_shape}"
        )
    if y.dim() != 1 or y.shape[0] != x.shape[0]:
        raise ValueError("labels must be rank-1 and aligned with the image batch")


def loss_gradient(model: DifferentiableClassifier, x: ImageBatch, y: LabelBatch) -> torch.Tensor:
    """Gradient of the cross-entropy loss with respect to the input pixels.

    Uses sum reduction so each sample's gradient row is independent of what
    else sits in the batch. Pure apart from the query counter: parameters,
    buffers and train/eval mode are left untouched.
    """
    _check_batch(model, x, y)
    x = x.detach().clone().requires_grad_(True)
    loss = F.cross_entropy(model(x), y, reduction="sum")
    # allow_unused covers logits with no path back to the pixels (constant
    # heads); their gradient is zero, not an error
    if loss.requires_grad:
        (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
    else:
        grad = None
    model.gradient_queries += 1
    return torch.zeros_like(x) if grad is None else grad.detach()
