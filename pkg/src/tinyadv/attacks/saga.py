"""Multi-model attack with attention-guided gradient blending.

Transformer members contribute gradients weighted pixel-wise by their
attention rollout map; convolutional members contribute plain gradients.
One shared perturbation is built so that every member is fooled at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..models.base import DifferentiableClassifier, ImageBatch, LabelBatch, loss_gradient
from ..models.vit import AttentionTrace, TinyViT, collect_attention
from .core import AttackOutcome, PerturbationBudget, constrain
from .whitebox import mim


@dataclass
class SagaMember:
    name: str
    model: DifferentiableClassifier
    alpha: float
    # use_rollout marks members whose gradient gets the attention weighting;
    # defaults to whether the model actually is a transformer.
    use_rollout: bool | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("member weight alpha must be non-negative")
        if self.use_rollout is None:
            self.use_rollout = isinstance(self.model, TinyViT)
        if self.use_rollout and not isinstance(self.model, TinyViT):
            raise ValueError(f"member {self.name} has no attention to roll out")


@dataclass
class SagaEnsembleSpec:
    members: list[SagaMember]
    epsilon: float
    step_size: float
    steps: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        if len({m.name for m in self.members}) != len(self.members):
            raise ValueError("member names must be unique")
        if self.epsilon < 0 or self.step_size <= 0 or self.steps < 1:
            raise ValueError("invalid attack budget")


@dataclass
class RolloutMap:
    """Attention rollout: token mixing matrix and its class-token saliency.

    token_matrix is (B, T, T) and row-stochastic; patch_map is the class-token
    row reshaped to the patch grid; pixel_map is its nearest-neighbor upsample
    to image resolution (before any multiplication with the image).
    """

    token_matrix: torch.Tensor
    patch_map: torch.Tensor
    pixel_map: torch.Tensor


def attention_rollout(trace: AttentionTrace, image_size: int) -> RolloutMap:
    """Compose per-layer attention into input-to-output token attribution.

    Each layer's heads are averaged, mixed half-and-half with the identity to
    model the residual path, and left-multiplied onto the running product.
    Rows stay stochastic by construction (convex mix of row-stochastic
    matrices), so no renormalization is applied.
    """
    if not trace.layers:
        raise ValueError("empty attention trace")
    rollout = None
    for att in trace.layers:
        mixed = 0.5 * att.mean(dim=1) + 0.5 * torch.eye(att.shape[-1], dtype=att.dtype)
        rollout = mixed if rollout is None else mixed @ rollout
    gh, gw = trace.patch_grid
    cls_row = rollout[:, 0, 1:]
    patch_map = cls_row.reshape(-1, gh, gw)
    pixel_map = F.interpolate(patch_map.unsqueeze(1), size=(image_size, image_size), mode="nearest")
    return RolloutMap(token_matrix=rollout, patch_map=patch_map, pixel_map=pixel_map)


def _blend(
    members: list[SagaMember],
    x: ImageBatch,
    y: LabelBatch,
    weighted: bool,
    with_rollout: bool,
) -> torch.Tensor:
    total = torch.zeros_like(x)
    equal = 1.0 / len(members)
    for member in members:
        g = loss_gradient(member.model, x, y)
        alpha = member.alpha if weighted else equal
        if with_rollout and member.use_rollout:
            trace = collect_attention(member.model, x)
            rollout = attention_rollout(trace, x.shape[-1])
            phi = rollout.pixel_map * x  # saliency modulated by the current iterate
            g = phi * g
        total = total + alpha * g
    return total


def blended_gradient(spec: SagaEnsembleSpec, x: ImageBatch, y: LabelBatch) -> torch.Tensor:
    """Weighted sum of member gradients, attention-modulated for transformers."""
    return _blend(spec.members, x, y, weighted=True, with_rollout=True)


def _member_success(
    members: list[SagaMember], x_adv: ImageBatch, y: LabelBatch
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    per = {m.name: m.model.predict(x_adv) != y for m in members}
    joint = torch.ones_like(y, dtype=torch.bool)
    for flags in per.values():
        joint &= flags
    return per, joint


def _run(
    spec: SagaEnsembleSpec,
    x: ImageBatch,
    y: LabelBatch,
    weighted: bool,
    with_rollout: bool,
    name: str,
) -> AttackOutcome:
    x0 = x.detach().clone()
    xt = x0.clone()
    for _ in range(spec.steps):
        g = _blend(spec.members, xt, y, weighted, with_rollout)
        xt = constrain(xt + spec.step_size * torch.sign(g), x0, spec.epsilon)
    per, joint = _member_success(spec.members, xt, y)
    return AttackOutcome(
        x_adv=xt,
        success=joint,
        queries=torch.full((x0.shape[0],), spec.steps, dtype=torch.int64),
        attack=name,
        epsilon=spec.epsilon,
        params={
            "step_size": spec.step_size,
            "steps": spec.steps,
            "alphas": {m.name: m.alpha for m in spec.members},
            "rollout": with_rollout,
        },
        member_success=per,
    )


def saga_attack(spec: SagaEnsembleSpec, x: ImageBatch, y: LabelBatch) -> AttackOutcome:
    """Joint attack on all members; success means every member is fooled."""
    return _run(spec, x, y, weighted=True, with_rollout=True, name="saga")


def saga_baselines(spec: SagaEnsembleSpec, x: ImageBatch, y: LabelBatch) -> dict:
    """Reference points for the blended attack.

    "basic": the same loop with equal weights and no attention modulation.
    "best_single_mim": MIM crafted on each member alone, scored by joint
    success on the whole ensemble; the best member's outcome is returned.
    """
    basic = _run(spec, x, y, weighted=False, with_rollout=False, name="saga_basic")

    budget = PerturbationBudget(epsilon=spec.epsilon, step_size=spec.step_size, steps=spec.steps)
    best_outcome = None
    best_name = None
    for member in spec.members:
        candidate = mim(member.model, x, y, budget)
        per, joint = _member_success(spec.members, candidate.x_adv, y)
        candidate = AttackOutcome(
            x_adv=candidate.x_adv,
            success=joint,
            queries=candidate.queries,
            attack=f"mim[{member.name}]",
            epsilon=spec.epsilon,
            params=candidate.params,
            member_success=per,
        )
        if best_outcome is None or candidate.success_rate() > best_outcome.success_rate():
            best_outcome = candidate
            best_name = member.name
    return {"basic": basic, "best_single_mim": best_outcome, "best_single_source": best_name}
