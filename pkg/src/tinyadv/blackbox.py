"""Black-box threat models: query-metered oracle, adaptive transfer pipeline,
and a hard-label query-search baseline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .attacks.core import AttackOutcome, PerturbationBudget, constrain
from .attacks.registry import make_attack
from .models.base import DifferentiableClassifier, ImageBatch, LabelBatch
from .models.cnn import TinyCnnConfig, build_tiny_cnn
from .models.data import make_stripes
from .models.train import train_classifier
from .models.vit import TinyViTConfig, build_tiny_vit


class BudgetExhausted(RuntimeError):
    """The oracle refused a query batch that would overrun its budget."""


class AdaptiveAttackError(RuntimeError):
    """Synthetic-model training diverged; the pipeline aborted."""


class QueryBudgetedOracle:
    """Hard-label gateway to a defense with exact query accounting.

    Only ``predict`` of the wrapped defense is ever touched, so the defense's
    gradient pathway stays provably unused. Every labeled sample costs one
    query; the log records (sample id, query index, returned label).
    """

    def __init__(self, defense, budget: int):
        if budget < 0:
            raise ValueError("query budget must be non-negative")
        self.defense = defense
        self.budget = int(budget)
        self.used = 0
        self.log: list[dict] = []

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def query(self, x: ImageBatch, sample_ids: list[int] | None = None) -> LabelBatch:
        n = x.shape[0]
        if n > self.remaining:
            raise BudgetExhausted(f"{n} labels requested, {self.remaining} queries left")
        with torch.no_grad():
            labels = self.defense.predict(x)
        ids = sample_ids if sample_ids is not None else list(range(n))
        for k, (sid, lab) in enumerate(zip(ids, labels.tolist())):
            self.log.append({"sample": int(sid), "query": self.used + k, "label": int(lab)})
        self.used += n
        return labels

    def dump_log(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for entry in self.log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


def label_with_defense(
    oracle: QueryBudgetedOracle,
    images: ImageBatch,
    fraction: float = 1.0,
    chunk: int = 256,
) -> tuple[ImageBatch, LabelBatch, bool]:
    """Label the leading fraction of a dataset through the metered oracle.

    Consumes exactly one query per labeled sample. If the budget runs dry
    mid-pass the labeled prefix is returned with the exhaustion marker set.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    take = math.ceil(fraction * images.shape[0])
    got: list[LabelBatch] = []
    exhausted = False
    start = 0
    while start < take:
        stop = min(start + chunk, take)
        if oracle.remaining < stop - start:
            stop = start + oracle.remaining
            exhausted = True
        if stop > start:
            got.append(oracle.query(images[start:stop], sample_ids=list(range(start, stop))))
        start = stop
        if exhausted:
            break
    labels = torch.cat(got) if got else torch.empty(0, dtype=torch.int64)
    return images[: labels.shape[0]], labels, exhausted


@dataclass
class AdaptiveAttackConfig:
    """Settings for the label-train-transfer pipeline.

    The surrogate ("synthetic") model is trained on defense-labeled data,
    optionally warmed up on a disjoint auxiliary synthetic set first, then a
    standard white-box attack on the surrogate is transferred to the defense.
    """

    arch: str = "tiny_cnn"
    arch_config: dict = field(default_factory=dict)
    fraction: float = 1.0
    pretrain: bool = False
    pretrain_samples: int = 256
    pretrain_epochs: int = 10
    attack_name: str = "mim"
    attack_params: dict = field(default_factory=dict)
    train_epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    query_budget: int | None = None  # defaults to one query per pool sample
    surrogate: DifferentiableClassifier | None = None  # bypass training entirely

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if self.arch not in ("tiny_vit", "tiny_cnn"):
            raise ValueError("surrogate arch must be tiny_vit or tiny_cnn")


def _build_surrogate(cfg: AdaptiveAttackConfig, image_size: int, channels: int):
    overrides = dict(cfg.arch_config)
    overrides.setdefault("image_size", image_size)
    overrides.setdefault("in_channels", channels)
    if cfg.arch == "tiny_vit":
        return build_tiny_vit(TinyViTConfig(**overrides), seed=cfg.seed)
    return build_tiny_cnn(TinyCnnConfig(**overrides), seed=cfg.seed)


def adaptive_transfer_attack(
    defense,
    pool_images: ImageBatch,
    eval_images: ImageBatch,
    eval_labels: LabelBatch,
    budget: PerturbationBudget,
    cfg: AdaptiveAttackConfig,
    oracle: QueryBudgetedOracle | None = None,
) -> tuple[AttackOutcome, DifferentiableClassifier, dict]:
    """Label a data pool through the oracle, train a surrogate, transfer MIM.

    Exactly one labeling pass is metered. Final success is read from the
    defense's hard labels outside the meter (evaluation is the experimenter's
    bookkeeping, not attacker queries). Gradients of the defense members are
    never touched; their query counters prove it.
    """
    if oracle is None:
        q = cfg.query_budget if cfg.query_budget is not None else pool_images.shape[0]
        oracle = QueryBudgetedOracle(defense, q)

    info: dict = {"labeled": 0, "exhausted": False, "queries_used": 0}
    surrogate = cfg.surrogate
    if surrogate is None:
        x_lab, y_lab, exhausted = label_with_defense(oracle, pool_images, cfg.fraction)
        info.update(labeled=int(y_lab.shape[0]), exhausted=exhausted)
        if y_lab.shape[0] == 0:
            raise AdaptiveAttackError("no labeled data: oracle budget exhausted immediately")
        surrogate = _build_surrogate(cfg, pool_images.shape[-1], pool_images.shape[1])
        if cfg.pretrain:
            # Disjoint auxiliary data stands in for large-corpus pre-training.
            aux_x, aux_y = make_stripes(
                cfg.pretrain_samples, image_size=pool_images.shape[-1],
                channels=pool_images.shape[1], seed=cfg.seed + 7919,
            )
            train_classifier(surrogate, aux_x, aux_y, epochs=cfg.pretrain_epochs,
                             lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed + 1)
        if cfg.train_epochs > 0:
            history = train_classifier(surrogate, x_lab, y_lab, epochs=cfg.train_epochs,
                                       lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed)
            if not math.isfinite(history[-1]["loss"]):
                raise AdaptiveAttackError("synthetic training diverged (non-finite loss)")
            info["surrogate_train_acc"] = history[-1]["train_acc"]
    info["queries_used"] = oracle.used

    attack = make_attack(cfg.attack_name, budget.epsilon, {
        "steps": budget.steps, "step_size": budget.step_size, **cfg.attack_params,
    })
    crafted = attack(surrogate, eval_images, eval_labels)
    with torch.no_grad():
        defense_labels = defense.predict(crafted.x_adv)
    success = defense_labels != eval_labels
    outcome = AttackOutcome(
        x_adv=crafted.x_adv,
        success=success,
        queries=torch.zeros(eval_images.shape[0], dtype=torch.int64),  # no per-sample oracle spend
        attack=f"adaptive[{cfg.attack_name}]",
        epsilon=budget.epsilon,
        params={"fraction": cfg.fraction, "pretrain": cfg.pretrain, "arch": cfg.arch,
                **{k: v for k, v in budget.as_dict().items() if k != "random_start"}},
    )
    return outcome, surrogate, info


def _sign_search(
    oracle: QueryBudgetedOracle,
    x: torch.Tensor,
    y: int,
    sid: int,
    epsilon: float,
    q: int,
    rng: torch.Generator,
    blocks: int = 16,
) -> tuple[torch.Tensor, bool, int]:
    """Coordinate-block sign search used as the default query algorithm.

    Walks from the all-plus corner of the ball toward the all-minus corner by
    flipping seeded coordinate blocks cumulatively, then tries random sign
    patterns with whatever budget remains.
    """
    flat = x.flatten()
    d = flat.numel()
    sign = torch.ones(d)
    spent = 0

    def try_signs(s: torch.Tensor) -> tuple[bool, torch.Tensor]:
        candidate = constrain((flat + epsilon * s).view_as(x), x, epsilon)
        label = oracle.query(candidate.unsqueeze(0), sample_ids=[sid])[0]
        return int(label) != int(y), candidate

    order = torch.randperm(d, generator=rng)
    bounds = [order[i::blocks] for i in range(blocks)]
    for block in [None] + bounds:  # first probe: all-plus corner, untouched sign
        if spent >= q:
            return x, False, spent
        if block is not None:
            sign[block] = -1.0
        hit, candidate = try_signs(sign)
        spent += 1
        if hit:
            return candidate, True, spent
    while spent < q:
        s = torch.where(torch.rand(d, generator=rng) < 0.5, -torch.ones(d), torch.ones(d))
        hit, candidate = try_signs(s)
        spent += 1
        if hit:
            return candidate, True, spent
    return x, False, spent


def hard_label_query_attack(
    oracle: QueryBudgetedOracle,
    x: ImageBatch,
    y: LabelBatch,
    epsilon: float,
    q: int,
    seed: int = 0,
    algorithm=None,
) -> AttackOutcome:
    """Per-sample label-only search inside the epsilon-ball.

    q is the per-sample query allowance and is respected exactly: a sample
    stops either at its first success or with precisely q queries spent.
    ``algorithm(oracle, image, label, sample_id, epsilon, q, generator)`` can
    replace the built-in sign search.
    """
    search = algorithm or _sign_search
    b = x.shape[0]
    x_adv = x.detach().clone()
    success = torch.zeros(b, dtype=torch.bool)
    queries = torch.zeros(b, dtype=torch.int64)
    for i in range(b):
        gen = torch.Generator().manual_seed(seed + i)
        adv, hit, spent = search(oracle, x[i], int(y[i]), i, epsilon, q, gen)
        x_adv[i] = adv
        success[i] = hit
        queries[i] = spent
    return AttackOutcome(
        x_adv=x_adv,
        success=success,
        queries=queries,
        attack="hard_label_search",
        epsilon=epsilon,
        params={"per_sample_budget": q, "seed": seed},
    )
