"""Ensemble output policies and friendly adversarial training."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .attacks.core import PerturbationBudget, constrain
from .models.base import DifferentiableClassifier, ImageBatch, LabelBatch, loss_gradient

POLICIES = ("random_selection", "majority_vote", "absolute_consensus")

# Label emitted by the consensus policy for samples it flags as adversarial.
ADVERSARIAL_FLAG = -1


class EnsembleDefense:
    """Hard-label defense over one or more member models.

    random_selection answers each sample with a uniformly drawn member
    (fresh draws on every call, from a seeded stream); majority_vote takes
    the plurality label with ties broken toward the lowest class index;
    absolute_consensus answers only when all members agree and otherwise
    flags the sample as adversarial.
    """

    def __init__(self, members, policy: str = "majority_vote", seed: int = 0):
        if isinstance(members, dict):
            members = list(members.items())
        members = [m if isinstance(m, tuple) else (f"member{i}", m) for i, m in enumerate(members)]
        if not members:
            raise ValueError("an ensemble defense needs at least one member")
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; known: {', '.join(POLICIES)}")
        first = members[0][1]
        for _, model in members:
            if model.num_classes != first.num_classes or model.input_shape != first.input_shape:
                raise ValueError("ensemble members must share class count and input shape")
        self.members = members
        self.policy = policy
        self.seed = seed
        self.num_classes = first.num_classes
        self.input_shape = first.input_shape
        self._rng = np.random.default_rng(seed)

    @torch.no_grad()
    def member_labels(self, x: ImageBatch) -> torch.Tensor:
        """Stacked per-member hard labels, shape (members, batch)."""
        return torch.stack([model.predict(x) for _, model in self.members])

    @torch.no_grad()
    def predict_with_flags(self, x: ImageBatch) -> tuple[LabelBatch, torch.Tensor]:
        labels = self.member_labels(x)
        k, b = labels.shape
        flags = torch.zeros(b, dtype=torch.bool)
        if self.policy == "random_selection":
            pick = torch.from_numpy(self._rng.integers(0, k, size=b))
            out = labels.gather(0, pick.view(1, -1)).squeeze(0)
        elif self.policy == "majority_vote":
            counts = torch.zeros(b, self.num_classes, dtype=torch.int64)
            for mi in range(k):
                counts.scatter_add_(1, labels[mi].view(-1, 1), torch.ones(b, 1, dtype=torch.int64))
            out = counts.argmax(dim=1)  # argmax takes the first max: lowest class wins ties
        else:  # absolute_consensus
            agree = (labels == labels[0]).all(dim=0)
            flags = ~agree
            out = torch.where(agree, labels[0], torch.full_like(labels[0], ADVERSARIAL_FLAG))
        return out, flags

    def predict(self, x: ImageBatch) -> LabelBatch:
        return self.predict_with_flags(x)[0]


def ensemble_predict(defense: EnsembleDefense, x: ImageBatch) -> LabelBatch:
    """Policy-resolved hard labels; flagged samples carry the -1 marker."""
    return defense.predict(x)


@dataclass(frozen=True)
class FatConfig:
    """Friendly adversarial example generation settings.

    steps is the PGD iteration count K; tau is the number of boundary
    crossings tolerated before a sample stops early.
    """

    epsilon: float
    step_size: float
    steps: int
    tau: int
    random_start: bool = False

    def __post_init__(self):
        if not 0 <= self.tau <= self.steps:
            raise ValueError("tau must lie in [0, steps]")
        if self.epsilon < 0 or self.step_size <= 0 or self.steps < 1:
            raise ValueError("invalid budget")


def fat_pgd_k_tau(
    model: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    cfg: FatConfig,
    generator: torch.Generator | None = None,
) -> ImageBatch:
    """PGD that lets each sample cross the decision boundary only tau times.

    Each iteration checks the current iterate before stepping: a misclassified
    sample with tau exhausted freezes where it stands; a misclassified sample
    with allowance left spends one unit and keeps stepping. With tau = steps
    nothing ever freezes and the output equals plain PGD bit for bit.
    """
    x0 = x.detach().clone()
    xt = x0.clone()
    if cfg.random_start:
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        noise = torch.empty_like(xt).uniform_(-cfg.epsilon, cfg.epsilon, generator=generator)
        xt = constrain(x0 + noise, x0, cfg.epsilon)
    b = x0.shape[0]
    tau = torch.full((b,), cfg.tau, dtype=torch.int64)
    done = torch.zeros(b, dtype=torch.bool)
    for _ in range(cfg.steps):
        mis = model.predict(xt) != y
        done |= mis & (tau == 0)
        spend = mis & ~done
        tau[spend] -= 1
        if done.all():
            break
        g = loss_gradient(model, xt, y)
        stepped = constrain(xt + cfg.step_size * torch.sign(g), x0, cfg.epsilon)
        xt = torch.where(done.view(-1, 1, 1, 1), xt, stepped)
    return xt


@dataclass(frozen=True)
class FatTrainConfig:
    fat: FatConfig
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    eval_steps: int = 20  # PGD length for the per-epoch robust accuracy probe

    @property
    def eval_budget(self) -> PerturbationBudget:
        return PerturbationBudget(
            epsilon=self.fat.epsilon,
            step_size=self.fat.epsilon / self.eval_steps,
            steps=self.eval_steps,
        )


def fat_train(
    model: DifferentiableClassifier,
    images: ImageBatch,
    labels: LabelBatch,
    cfg: FatTrainConfig,
    eval_images: ImageBatch | None = None,
    eval_labels: LabelBatch | None = None,
) -> list[dict]:
    """Adversarial training on friendly examples.

    Each batch is replaced by its fat_pgd_k_tau counterpart generated with
    the current weights, then trained on with cross-entropy. History rows
    carry clean and PGD robust accuracy measured after every epoch.
    """
    from .attacks.whitebox import pgd  # local import to avoid a cycle

    if images.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if eval_images is None:
        eval_images, eval_labels = images, labels
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n = images.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            model.eval()
            x_friendly = fat_pgd_k_tau(model, xb, yb, cfg.fat)
            model.train()
            opt.zero_grad()
            loss = F.cross_entropy(model(x_friendly), yb)
            loss.backward()
            opt.step()
            total_loss += loss.item() * idx.shape[0]
        model.eval()
        robust = pgd(model, eval_images, eval_labels, cfg.eval_budget)
        history.append(
            {
                "epoch": epoch,
                "loss": total_loss / n,
                "clean_acc": model.accuracy(eval_images, eval_labels),
                "robust_acc": (model.predict(robust.x_adv) == eval_labels).float().mean().item(),
            }
        )
    model.eval()
    return history


def save_fat_history(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["epoch", "loss", "clean_acc", "robust_acc"]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in fields})
