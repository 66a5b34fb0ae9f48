"""Name-indexed attack builders shared by the CLI and evaluation protocols."""

from __future__ import annotations

from functools import partial

from .core import PerturbationBudget
from .whitebox import (
    ApgdSchedule,
    CwConfig,
    PreprocessedClassifier,
    apgd,
    bpda,
    cw,
    fgsm,
    mim,
    pgd,
    quantize_pixels,
)

ATTACK_NAMES = ("fgsm", "pgd", "mim", "cw", "apgd", "bpda")


def make_attack(name: str, epsilon: float, params: dict | None = None):
    """Build ``attack(model, x, y) -> AttackOutcome`` from a config fragment.

    Iterative defaults follow the reference parameterization: PGD/MIM run 20
    steps of eps/20, C&W uses confidence 50 over 30 optimizer steps, BPDA 100
    steps of 0.5, APGD starts at twice the budget.
    """
    p = dict(params or {})
    if name == "fgsm":
        return lambda model, x, y: fgsm(model, x, y, epsilon)
    if name == "pgd":
        budget = PerturbationBudget(
            epsilon=epsilon,
            step_size=p.get("step_size", epsilon / 20.0),
            steps=p.get("steps", 20),
            random_start=p.get("random_start", False),
        )
        return lambda model, x, y: pgd(model, x, y, budget)
    if name == "mim":
        budget = PerturbationBudget(
            epsilon=epsilon,
            step_size=p.get("step_size", epsilon / 20.0),
            steps=p.get("steps", 20),
        )
        return lambda model, x, y: mim(model, x, y, budget, decay=p.get("decay", 1.0))
    if name == "cw":
        cfg = CwConfig(
            confidence=p.get("confidence", 50.0),
            learning_rate=p.get("learning_rate", 0.01),
            steps=p.get("steps", 30),
            binary_search_rounds=p.get("binary_search_rounds", 6),
            c_init=p.get("c_init", 1.0),
        )
        return lambda model, x, y: cw(model, x, y, epsilon, cfg)
    if name == "apgd":
        budget = PerturbationBudget(
            epsilon=epsilon,
            step_size=p.get("step_size", 2.0 * epsilon),
            steps=p.get("steps", 20),
        )
        schedule = ApgdSchedule(rho=p.get("rho", 0.75))
        return lambda model, x, y: apgd(model, x, y, budget, schedule)
    if name == "bpda":
        budget = PerturbationBudget(
            epsilon=epsilon,
            step_size=p.get("step_size", 0.5),
            steps=p.get("steps", 100),
        )
        levels = p.get("levels", 8)

        def run(model, x, y):
            # Wrap a bare classifier behind the quantizer it is meant to hide
            # behind; an already-wrapped model is attacked as-is.
            if not isinstance(model, PreprocessedClassifier):
                model = PreprocessedClassifier(
                    partial(quantize_pixels, levels=levels), model, name=f"quantize{levels}"
                )
            return bpda(model, lambda t: t, x, y, budget)

        return run
    raise ValueError(f"unknown attack {name!r}; known: {', '.join(ATTACK_NAMES)}")
