"""Attack stack: budget plumbing, white-box attacks, ensemble blending."""

from .core import (
    BALL_TOLERANCE,
    AttackOutcome,
    PerturbationBudget,
    assert_conformant,
    clip_pixels,
    conformance_report,
    constrain,
    load_outcome,
    project_linf,
    robust_accuracy,
    save_outcome,
)
from .registry import ATTACK_NAMES, make_attack
from .saga import (
    RolloutMap,
    SagaEnsembleSpec,
    SagaMember,
    attention_rollout,
    blended_gradient,
    saga_attack,
    saga_baselines,
)
from .whitebox import (
    ApgdController,
    ApgdSchedule,
    CwConfig,
    MimState,
    PreprocessedClassifier,
    apgd,
    apgd_checkpoints,
    bpda,
    count_improvements,
    cw,
    fgsm,
    mim,
    pgd,
    quantize_pixels,
)

__all__ = [
    "ATTACK_NAMES",
    "BALL_TOLERANCE",
    "ApgdController",
    "ApgdSchedule",
    "AttackOutcome",
    "CwConfig",
    "MimState",
    "PerturbationBudget",
    "PreprocessedClassifier",
    "RolloutMap",
    "SagaEnsembleSpec",
    "SagaMember",
    "apgd",
    "apgd_checkpoints",
    "assert_conformant",
    "attention_rollout",
    "blended_gradient",
    "bpda",
    "clip_pixels",
    "conformance_report",
    "constrain",
    "count_improvements",
    "cw",
    "fgsm",
    "load_outcome",
    "make_attack",
    "mim",
    "pgd",
    "project_linf",
    "quantize_pixels",
    "robust_accuracy",
    "saga_attack",
    "saga_baselines",
    "save_outcome",
]
