"""Pairwise transferability and the max-over-attacks transfer matrix."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .attacks.core import PerturbationBudget
from .attacks.whitebox import fgsm, mim, pgd
from .models.base import DifferentiableClassifier, ImageBatch, LabelBatch

# The matrix protocol deliberately runs short 10-step attacks; longer runs
# overfit the source model and transfer worse.
MATRIX_STEPS = 10


def find_jointly_correct(
    model_i: DifferentiableClassifier,
    model_j: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    m: int,
) -> tuple[torch.Tensor, int]:
    """First m sample indices both models classify correctly.

    Returns (indices, shortfall); shortfall counts how many of the requested
    m could not be found, and a warning is emitted when it is nonzero.
    """
    ok = (model_i.predict(x) == y) & (model_j.predict(x) == y)
    idx = torch.nonzero(ok, as_tuple=False).flatten()[:m]
    shortfall = m - idx.numel()
    if shortfall > 0:
        warnings.warn(f"only {idx.numel()} of {m} jointly correct samples available")
    return idx, max(shortfall, 0)


def transferability(
    source: DifferentiableClassifier,
    target: DifferentiableClassifier,
    attack,
    x: ImageBatch,
    y: LabelBatch,
) -> tuple[float, torch.Tensor]:
    """Fraction of source-crafted adversarial samples that flip the target.

    x, y must already be the jointly correct subset. Returns the score and
    the per-sample flip flags so callers can recount exactly.
    """
    if x.shape[0] == 0:
        raise ValueError("transferability over an empty sample set is undefined")
    outcome = attack(source, x, y)
    flipped = target.predict(outcome.x_adv) != y
    return flipped.float().mean().item(), flipped


def _protocol_attacks(epsilon: float) -> dict[str, object]:
    budget = PerturbationBudget(epsilon=epsilon, step_size=epsilon / MATRIX_STEPS, steps=MATRIX_STEPS)
    return {
        "fgsm": lambda mdl, x, y: fgsm(mdl, x, y, epsilon),
        "pgd": lambda mdl, x, y: pgd(mdl, x, y, budget),
        "mim": lambda mdl, x, y: mim(mdl, x, y, budget),
    }


@dataclass
class TransferMatrix:
    """Ordered-pair transfer scores: rows craft the attack, columns evaluate it."""

    names: list[str]
    values: np.ndarray
    attacks: list[list[str]]
    samples: np.ndarray
    epsilon: float
    shortfalls: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["source\\target," + ",".join(self.names)]
        for i, name in enumerate(self.names):
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in self.values[i]))
        path.write_text("\n".join(lines) + "\n")

    def to_json(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "version": 1,
            "names": self.names,
            "epsilon": self.epsilon,
            "values": [[float(v) for v in row] for row in self.values],
            "winning_attacks": self.attacks,
            "samples": [[int(v) for v in row] for row in self.samples],
            "shortfalls": [[int(v) for v in row] for row in self.shortfalls],
        }
        path.write_text(json.dumps(payload, sort_keys=True, indent=2))

    def render_heatmap(self, path: str | Path, cell: int = 40) -> None:
        """Low-to-high transfer drawn dark-to-bright; deterministic bytes."""
        n = len(self.names)
        img = Image.new("RGB", (n * cell, n * cell))
        px = img.load()
        for i in range(n):
            for j in range(n):
                v = float(self.values[i, j])
                color = (int(30 + 225 * v), int(30 + 80 * (1 - v)), int(90 * (1 - v)))
                for dy in range(cell):
                    for dx in range(cell):
                        border = dx == 0 or dy == 0
                        px[j * cell + dx, i * cell + dy] = (15, 15, 15) if border else color
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format="PNG")


def transfer_matrix(
    models: dict[str, DifferentiableClassifier],
    x: ImageBatch,
    y: LabelBatch,
    m: int,
    epsilon: float,
    diagonal_sources: dict[str, DifferentiableClassifier] | None = None,
) -> TransferMatrix:
    """Max transferability over FGSM / 10-step PGD / 10-step MIM per pair.

    Diagonal entries measure self-transfer from an independently trained copy
    when one is supplied; without a copy the model attacks itself.
    """
    if len(models) < 2:
        raise ValueError("a transfer matrix needs at least two models")
    names = list(models)
    n = len(names)
    values = np.zeros((n, n))
    samples = np.zeros((n, n), dtype=np.int64)
    shortfalls = np.zeros((n, n), dtype=np.int64)
    winners: list[list[str]] = [["" for _ in range(n)] for _ in range(n)]
    attacks = _protocol_attacks(epsilon)

    for i, ni in enumerate(names):
        for j, nj in enumerate(names):
            source = models[ni]
            if i == j and diagonal_sources and ni in diagonal_sources:
                source = diagonal_sources[ni]
            target = models[nj]
            idx, short = find_jointly_correct(source, target, x, y, m)
            shortfalls[i, j] = short
            samples[i, j] = idx.numel()
            if idx.numel() == 0:
                winners[i][j] = "none"
                continue
            xs, ys = x[idx], y[idx]
            best_t, best_name = -1.0, ""
            for attack_name, attack in attacks.items():
                t, _ = transferability(source, target, attack, xs, ys)
                if t > best_t:
                    best_t, best_name = t, attack_name
            values[i, j] = best_t
            winners[i][j] = best_name
    return TransferMatrix(
        names=names,
        values=values,
        attacks=winners,
        samples=samples,
        epsilon=epsilon,
        shortfalls=shortfalls,
    )
