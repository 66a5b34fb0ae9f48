"""Shared attack primitives: budgets, projections, outcome records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

# Every linf comparison in the package allows this much float slack.
BALL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PerturbationBudget:
    """l-infinity attack budget on [0,1] pixels.

    epsilon bounds the per-pixel perturbation, step_size is the per-iteration
    magnitude, steps the iteration count. Single-step attacks use steps=1.
    """

    epsilon: float
    step_size: float
    steps: int = 1
    random_start: bool = False
    norm: str = "linf"

    def __post_init__(self):
        if self.norm != "linf":
            raise ValueError("only the linf norm is supported")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "steps": self.steps,
            "random_start": self.random_start,
            "norm": self.norm,
        }


def project_linf(x: torch.Tensor, x_ref: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Project onto the epsilon-ball around x_ref, coordinate-wise."""
    return torch.clamp(x, x_ref - epsilon, x_ref + epsilon)


def clip_pixels(x: torch.Tensor) -> torch.Tensor:
    """Clamp into the [0,1] pixel box."""
    return torch.clamp(x, 0.0, 1.0)


def constrain(x: torch.Tensor, x_ref: torch.Tensor, epsilon: float) -> torch.Tensor:
    # Project-then-clip equals clip-then-project here: both land on
    # [max(0, ref-eps), min(1, ref+eps)] coordinate-wise.
    return clip_pixels(project_linf(x, x_ref, epsilon))


@dataclass
class AttackOutcome:
    """Adversarial batch plus per-sample bookkeeping.

    success[i] is True when the attacked predictor labels x_adv[i] differently
    from y[i]; queries[i] counts the attack's model queries for that sample
    (gradient evaluations for white-box attacks, oracle labels for black-box).
    """

    x_adv: torch.Tensor
    success: torch.Tensor
    queries: torch.Tensor
    attack: str
    epsilon: float
    params: dict = field(default_factory=dict)
    member_success: dict[str, torch.Tensor] | None = None

    def success_rate(self) -> float:
        return self.success.float().mean().item()


def save_outcome(outcome: AttackOutcome, stem: str | Path) -> None:
    """Write ``<stem>.bin`` (float32-le adversarial pixels) and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = outcome.x_adv.detach().cpu().numpy().astype("<f4")
    blob.tofile(stem.with_suffix(".bin"))
    record = {
        "version": 1,
        "attack": outcome.attack,
        "epsilon": outcome.epsilon,
        "params": outcome.params,
        "shape": list(outcome.x_adv.shape),
        "dtype": "float32-le",
        "success": [bool(v) for v in outcome.success.tolist()],
        "queries": [int(v) for v in outcome.queries.tolist()],
    }
    if outcome.member_success is not None:
        record["member_success"] = {
            name: [bool(v) for v in flags.tolist()]
            for name, flags in outcome.member_success.items()
        }
    stem.with_suffix(".json").write_text(json.dumps(record, sort_keys=True, indent=2))


def load_outcome(stem: str | Path) -> AttackOutcome:
    stem = Path(stem)
    record = json.loads(stem.with_suffix(".json").read_text())
    shape = tuple(record["shape"])
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError("outcome blob does not match recorded shape")
    member = record.get("member_success")
    return AttackOutcome(
        x_adv=torch.from_numpy(raw.reshape(shape).copy()),
        success=torch.tensor(record["success"], dtype=torch.bool),
        queries=torch.tensor(record["queries"], dtype=torch.int64),
        attack=record["attack"],
        epsilon=record["epsilon"],
        params=record["params"],
        member_success=None
        if member is None
        else {k: torch.tensor(v, dtype=torch.bool) for k, v in member.items()},
    )


def conformance_report(x_adv: torch.Tensor, x: torch.Tensor, epsilon: float) -> dict:
    """Budget conformance numbers shared by the test harness and the CLI."""
    gap = (x_adv - x).abs().max().item() if x.numel() else 0.0
    lo = x_adv.min().item() if x_adv.numel() else 0.0
    hi = x_adv.max().item() if x_adv.numel() else 1.0
    return {
        "max_linf": gap,
        "pixel_min": lo,
        "pixel_max": hi,
        "within_ball": gap <= epsilon + BALL_TOLERANCE,
        "within_box": lo >= -BALL_TOLERANCE and hi <= 1.0 + BALL_TOLERANCE,
    }


def assert_conformant(x_adv: torch.Tensor, x: torch.Tensor, epsilon: float) -> None:
    report = conformance_report(x_adv, x, epsilon)
    if not (report["within_ball"] and report["within_box"]):
        raise AssertionError(f"budget violation: {report}")


def robust_accuracy(predictor, x_adv: torch.Tensor, y: torch.Tensor) -> float:
    """Fraction of adversarial samples the predictor still labels correctly.

    Works for bare models and ensemble defenses alike: anything with a
    ``predict`` method. Flagged/abstained labels (negative ids) never match.
    """
    if x_adv.shape[0] == 0:
        raise ValueError("robust accuracy over an empty batch is undefined")
    labels = predictor.predict(x_adv)
    return (labels == y).float().mean().item()
