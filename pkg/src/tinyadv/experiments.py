"""Config-driven experiment runners behind the command line."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .attacks.core import (
    AttackOutcome,
    PerturbationBudget,
    conformance_report,
    robust_accuracy,
    save_outcome,
)
from .attacks.registry import ATTACK_NAMES, make_attack
from .attacks.saga import SagaEnsembleSpec, SagaMember, saga_attack, saga_baselines
from .blackbox import (
    AdaptiveAttackConfig,
    QueryBudgetedOracle,
    adaptive_transfer_attack,
    hard_label_query_attack,
)
from .defense import (
    EnsembleDefense,
    FatConfig,
    FatTrainConfig,
    fat_train,
    save_fat_history,
)
from .models.cnn import TinyCnnConfig, build_tiny_cnn
from .models.data import load_dataset, make_stripes
from .models.io import load_model, save_weights
from .models.train import train_classifier
from .models.vit import TinyViTConfig, build_tiny_vit
from .regions import decision_region_grid, render_region_grid, save_grid
from .transfer import transfer_matrix

SCHEMA_VERSION = 1

COMMANDS = (
    "train",
    "attack",
    "saga",
    "transfer",
    "ensemble-eval",
    "blackbox-adaptive",
    "blackbox-query",
    "regions",
    "fat-train",
)


class ConfigError(ValueError):
    """Invalid experiment config; carries the offending field path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def report(self) -> dict:
        return {"error": {"field": self.field, "message": self.message}}


def _get(cfg: dict, path: str, default=None, required: bool = False):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(path, "required field missing")
            return default
        node = node[part]
    return node


def _require_path(cfg: dict, field: str) -> str:
    stem = _get(cfg, field, required=True)
    manifest = Path(str(stem) + ".manifest.json")
    if not manifest.exists():
        raise ConfigError(field, f"no model manifest at {manifest}")
    return stem


@dataclass
class ExperimentConfig:
    """Validated bundle of command, raw config document, seed and output dir."""

    command: str
    raw: dict
    seed: int
    out: Path

    @classmethod
    def load(
        cls,
        command: str,
        config_path: str | Path,
        seed: int | None = None,
        out: str | Path | None = None,
    ) -> "ExperimentConfig":
        if command not in COMMANDS:
            raise ConfigError("command", f"unknown command {command!r}")
        path = Path(config_path)
        if not path.exists():
            raise ConfigError("config", f"no config file at {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError("config", f"invalid JSON: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
        if seed is None:
            seed = _get(raw, "seed")
        if seed is None:
            raise ConfigError("seed", "seed is mandatory (config key or --seed)")
        if out is None:
            out = _get(raw, "out")
        if out is None:
            raise ConfigError("out", "output directory is mandatory (config key or --out)")
        cfg = cls(command=command, raw=raw, seed=int(seed), out=Path(out))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = _VALIDATORS[self.command]
        v(self.raw)


def _validate_dataset(cfg: dict, field: str = "dataset") -> None:
    ds = _get(cfg, field)
    if ds is None:
        return  # defaults apply
    if "path" in ds:
        stem = Path(ds["path"])
        if not stem.with_suffix(".data.json").exists():
            raise ConfigError(f"{field}.path", f"no dataset manifest at {stem}.data.json")


def _validate_train(cfg: dict) -> None:
    kind = _get(cfg, "model.kind", required=True)
    if kind not in ("tiny_vit", "tiny_cnn"):
        raise ConfigError("model.kind", "must be tiny_vit or tiny_cnn")
    _validate_dataset(cfg)


def _validate_attack(cfg: dict) -> None:
    _require_path(cfg, "model.path")
    name = _get(cfg, "attack.name", required=True)
    if name not in ATTACK_NAMES:
        raise ConfigError("attack.name", f"unknown attack {name!r}")
    eps = _get(cfg, "attack.epsilon", required=True)
    if not isinstance(eps, (int, float)) or eps < 0:
        raise ConfigError("attack.epsilon", "must be a non-negative number")
    _validate_dataset(cfg)


def _validate_saga(cfg: dict) -> None:
    members = _get(cfg, "members", required=True)
    if not isinstance(members, list) or not members:
        raise ConfigError("members", "need a non-empty member list")
    for i, m in enumerate(members):
        _require_path(m, "path")
        if m.get("alpha", 1.0) < 0:
            raise ConfigError(f"members[{i}].alpha", "must be non-negative")
    _get(cfg, "attack.epsilon", required=True)
    _validate_dataset(cfg)


def _validate_transfer(cfg: dict) -> None:
    models = _get(cfg, "models", required=True)
    if not isinstance(models, list) or len(models) < 2:
        raise ConfigError("models", "transfer needs at least two models")
    for m in models:
        if "name" not in m:
            raise ConfigError("models", "every model entry needs a name")
        _require_path(m, "path")
    for m in _get(cfg, "diagonal_copies", default=[]):
        _require_path(m, "path")
    _get(cfg, "epsilon", required=True)
    _validate_dataset(cfg)


def _validate_ensemble(cfg: dict) -> None:
    members = _get(cfg, "members", required=True)
    if not members:
        raise ConfigError("members", "need at least one member")
    for m in members:
        _require_path(m, "path")
    policy = _get(cfg, "policy", default="majority_vote")
    if policy not in ("random_selection", "majority_vote", "absolute_consensus"):
        raise ConfigError("policy", f"unknown policy {policy!r}")
    if _get(cfg, "outcome_path") is None:
        _get(cfg, "attack.name", required=True)
        _get(cfg, "attack.epsilon", required=True)
        _require_path(cfg, "source.path")
    _validate_dataset(cfg)


def _validate_blackbox_adaptive(cfg: dict) -> None:
    for m in _get(cfg, "defense.members", required=True):
        _require_path(m, "path")
    frac = _get(cfg, "adaptive.fraction", default=1.0)
    if not 0 < frac <= 1:
        raise ConfigError("adaptive.fraction", "must lie in (0, 1]")
    _get(cfg, "budget.epsilon", required=True)
    _validate_dataset(cfg)


def _validate_blackbox_query(cfg: dict) -> None:
    for m in _get(cfg, "defense.members", required=True):
        _require_path(m, "path")
    eps = _get(cfg, "epsilon", required=True)
    if eps < 0:
        raise ConfigError("epsilon", "must be non-negative")
    q = _get(cfg, "per_sample_budget", required=True)
    if not isinstance(q, int) or q < 0:
        raise ConfigError("per_sample_budget", "must be a non-negative integer")
    _validate_dataset(cfg)


def _validate_regions(cfg: dict) -> None:
    _require_path(cfg, "model.path")
    if _get(cfg, "compare.path") is not None:
        _require_path(cfg, "compare.path")
    radius = _get(cfg, "radius", default=16)
    if not isinstance(radius, int) or radius < 1:
        raise ConfigError("radius", "must be a positive integer")
    _validate_dataset(cfg)


def _validate_fat(cfg: dict) -> None:
    kind = _get(cfg, "model.kind", required=True)
    if kind not in ("tiny_vit", "tiny_cnn"):
        raise ConfigError("model.kind", "must be tiny_vit or tiny_cnn")
    fat = _get(cfg, "fat", required=True)
    for key in ("epsilon", "step_size", "steps", "tau"):
        if key not in fat:
            raise ConfigError(f"fat.{key}", "required field missing")
    if not 0 <= fat["tau"] <= fat["steps"]:
        raise ConfigError("fat.tau", "tau must lie in [0, steps]")
    _validate_dataset(cfg)


_VALIDATORS = {
    "train": _validate_train,
    "attack": _validate_attack,
    "saga": _validate_saga,
    "transfer": _validate_transfer,
    "ensemble-eval": _validate_ensemble,
    "blackbox-adaptive": _validate_blackbox_adaptive,
    "blackbox-query": _validate_blackbox_query,
    "regions": _validate_regions,
    "fat-train": _validate_fat,
}


def _dataset(cfg: dict, seed: int, default_n: int = 512, field: str = "dataset"):
    ds = _get(cfg, field, default={}) or {}
    if "path" in ds:
        return load_dataset(ds["path"])
    return make_stripes(
        ds.get("n", default_n),
        image_size=ds.get("image_size", 16),
        channels=ds.get("channels", 1),
        amplitude=ds.get("amplitude", 0.25),
        noise=ds.get("noise", 0.12),
        seed=ds.get("seed", seed),
    )


def _build_model(section: dict, seed: int):
    kind = section["kind"]
    config = section.get("config", {})
    if kind == "tiny_vit":
        return build_tiny_vit(TinyViTConfig(**config), seed=section.get("seed", seed))
    return build_tiny_cnn(TinyCnnConfig(**config), seed=section.get("seed", seed))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _results(cfg: ExperimentConfig, metrics: dict, budget: dict | None = None,
             extra: dict | None = None) -> dict:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "seed": cfg.seed,
        "budget": budget,
        "metrics": metrics,
    }
    if extra:
        payload.update(extra)
    _write_json(cfg.out / "results.json", payload)
    return payload


def _budget_echo(epsilon: float, **kw) -> dict:
    echo = {"norm": "linf", "epsilon": float(epsilon)}
    echo.update({k: v for k, v in kw.items() if v is not None})
    return echo


def _split(x, y, fraction: float):
    cut = int(x.shape[0] * fraction)
    return (x[:cut], y[:cut]), (x[cut:], y[cut:])


def run_experiment(cfg: ExperimentConfig) -> dict:
    torch.manual_seed(cfg.seed)
    runner = _RUNNERS[cfg.command]
    return runner(cfg)


def _run_train(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    x, y = _dataset(raw, cfg.seed)
    (xt, yt), (xv, yv) = _split(x, y, _get(raw, "dataset.train_fraction", default=0.75))
    model = _build_model(raw["model"], cfg.seed)
    history = train_classifier(
        model, xt, yt,
        epochs=_get(raw, "train.epochs", default=30),
        lr=_get(raw, "train.lr", default=1e-3),
        batch_size=_get(raw, "train.batch_size", default=64),
        seed=cfg.seed,
        val_images=xv if xv.shape[0] else None,
        val_labels=yv if xv.shape[0] else None,
    )
    name = _get(raw, "name", default="model")
    save_weights(model, cfg.out / name)
    _write_json(cfg.out / "history.json", {"history": history})
    metrics = {
        "model_id": name,
        "clean_accuracy": model.accuracy(xv, yv) if xv.shape[0] else model.accuracy(xt, yt),
        "train_accuracy": history[-1]["train_acc"],
        "final_loss": history[-1]["loss"],
    }
    return _results(cfg, metrics, budget=None,
                    extra={"artifacts": {"weights": name}})


def _run_attack(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    model = load_model(raw["model"]["path"])
    x, y = _dataset(raw, cfg.seed)
    samples = _get(raw, "eval.samples", default=min(128, x.shape[0]))
    x, y = x[:samples], y[:samples]
    name = _get(raw, "attack.name", required=True)
    epsilon = float(_get(raw, "attack.epsilon", required=True))
    params = _get(raw, "attack.params", default={}) or {}
    attack = make_attack(name, epsilon, params)
    outcome = attack(model, x, y)
    save_outcome(outcome, cfg.out / "outcome")
    conf = conformance_report(outcome.x_adv, x, epsilon)
    metrics = {
        "model_id": _get(raw, "model.id", default=Path(raw["model"]["path"]).name),
        "clean_accuracy": model.accuracy(x, y),
        "robust_accuracy": {name: robust_accuracy(model, outcome.x_adv, y)},
        "success_rate": outcome.success_rate(),
        "conformance": conf,
        "queries_per_sample": int(outcome.queries[0]) if outcome.queries.numel() else 0,
    }
    budget = _budget_echo(epsilon, **{k: v for k, v in outcome.params.items() if k != "epsilon"})
    return _results(cfg, metrics, budget=budget,
                    extra={"artifacts": {"outcome": "outcome"}})


def _run_saga(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    members = []
    for i, m in enumerate(raw["members"]):
        model = load_model(m["path"])
        members.append(SagaMember(
            name=m.get("name", f"member{i}"),
            model=model,
            alpha=m.get("alpha", 1.0),
        ))
    epsilon = float(_get(raw, "attack.epsilon", required=True))
    spec = SagaEnsembleSpec(
        members=members,
        epsilon=epsilon,
        step_size=_get(raw, "attack.step_size", default=epsilon / 10.0),
        steps=_get(raw, "attack.steps", default=20),
    )
    x, y = _dataset(raw, cfg.seed)
    samples = _get(raw, "eval.samples", default=min(128, x.shape[0]))
    x, y = x[:samples], y[:samples]
    outcome = saga_attack(spec, x, y)
    baselines = saga_baselines(spec, x, y)
    save_outcome(outcome, cfg.out / "outcome")
    metrics = {
        "model_id": "+".join(m.name for m in members),
        "joint_success": {
            "saga": outcome.success_rate(),
            "basic": baselines["basic"].success_rate(),
            "best_single_mim": baselines["best_single_mim"].success_rate(),
        },
        "best_single_source": baselines["best_single_source"],
        "member_success": {
            name: flags.float().mean().item()
            for name, flags in outcome.member_success.items()
        },
    }
    budget = _budget_echo(epsilon, step_size=spec.step_size, steps=spec.steps)
    return _results(cfg, metrics, budget=budget,
                    extra={"artifacts": {"outcome": "outcome"}})


def _run_transfer(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    models = {m["name"]: load_model(m["path"]) for m in raw["models"]}
    copies = {m["name"]: load_model(m["path"]) for m in _get(raw, "diagonal_copies", default=[])}
    x, y = _dataset(raw, cfg.seed)
    epsilon = float(raw["epsilon"])
    matrix = transfer_matrix(models, x, y, m=_get(raw, "m", default=64),
                             epsilon=epsilon, diagonal_sources=copies or None)
    matrix.to_csv(cfg.out / "transfer.csv")
    matrix.to_json(cfg.out / "transfer.json")
    if _get(raw, "heatmap", default=True):
        matrix.render_heatmap(cfg.out / "transfer.png")
    metrics = {
        "model_id": "+".join(matrix.names),
        "matrix": [[float(v) for v in row] for row in matrix.values],
        "names": matrix.names,
    }
    return _results(cfg, metrics, budget=_budget_echo(epsilon),
                    extra={"artifacts": {"csv": "transfer.csv", "sidecar": "transfer.json"}})


def _run_ensemble(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    members = [(m.get("name", f"member{i}"), load_model(m["path"]))
               for i, m in enumerate(raw["members"])]
    policy = _get(raw, "policy", default="majority_vote")
    defense = EnsembleDefense(members, policy=policy, seed=_get(raw, "defense_seed", default=cfg.seed))
    x, y = _dataset(raw, cfg.seed)
    samples = _get(raw, "eval.samples", default=min(128, x.shape[0]))
    x, y = x[:samples], y[:samples]

    if _get(raw, "outcome_path"):
        from .attacks.core import load_outcome

        outcome = load_outcome(raw["outcome_path"])
        x_adv = outcome.x_adv
        epsilon = outcome.epsilon
        attack_name = outcome.attack
    else:
        attack_name = raw["attack"]["name"]
        epsilon = float(raw["attack"]["epsilon"])
        attack = make_attack(attack_name, epsilon, _get(raw, "attack.params", default={}))
        source = load_model(raw["source"]["path"])
        x_adv = attack(source, x, y).x_adv

    draws = _get(raw, "draws", default=1)
    accs = []
    for _ in range(draws):
        accs.append(robust_accuracy(defense, x_adv, y))
    metrics = {
        "model_id": f"ensemble[{policy}]",
        "clean_accuracy": (defense.predict(x) == y).float().mean().item(),
        "robust_accuracy": {attack_name: sum(accs) / len(accs)},
        "draws": draws,
        "member_robust": {
            name: (model.predict(x_adv) == y).float().mean().item() for name, model in members
        },
    }
    return _results(cfg, metrics, budget=_budget_echo(epsilon))


def _run_blackbox_adaptive(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    members = [(m.get("name", f"member{i}"), load_model(m["path"]))
               for i, m in enumerate(raw["defense"]["members"])]
    defense = EnsembleDefense(members, policy=_get(raw, "defense.policy", default="majority_vote"),
                              seed=_get(raw, "defense.seed", default=cfg.seed))
    pool_x, _ = _dataset(raw, cfg.seed, default_n=_get(raw, "dataset.pool_n", default=512))
    eval_x, eval_y = _dataset(
        {"dataset": {**(_get(raw, "dataset", default={}) or {}),
                     "n": _get(raw, "dataset.eval_n", default=128),
                     "seed": cfg.seed + 1}},
        cfg.seed + 1,
    )
    grad_before = {name: model.gradient_queries for name, model in members}
    acfg = AdaptiveAttackConfig(
        arch=_get(raw, "adaptive.arch", default="tiny_cnn"),
        arch_config=_get(raw, "adaptive.arch_config", default={}) or {},
        fraction=_get(raw, "adaptive.fraction", default=1.0),
        pretrain=_get(raw, "adaptive.pretrain", default=False),
        pretrain_samples=_get(raw, "adaptive.pretrain_samples", default=256),
        pretrain_epochs=_get(raw, "adaptive.pretrain_epochs", default=10),
        attack_name=_get(raw, "adaptive.attack.name", default="mim"),
        attack_params=_get(raw, "adaptive.attack.params", default={}) or {},
        train_epochs=_get(raw, "adaptive.train_epochs", default=30),
        lr=_get(raw, "adaptive.lr", default=1e-3),
        batch_size=_get(raw, "adaptive.batch_size", default=64),
        seed=cfg.seed,
        query_budget=_get(raw, "adaptive.query_budget"),
    )
    budget = PerturbationBudget(
        epsilon=float(raw["budget"]["epsilon"]),
        step_size=_get(raw, "budget.step_size", default=float(raw["budget"]["epsilon"]) / 20.0),
        steps=_get(raw, "budget.steps", default=20),
    )
    q = acfg.query_budget if acfg.query_budget is not None else pool_x.shape[0]
    oracle = QueryBudgetedOracle(defense, q)
    outcome, surrogate, info = adaptive_transfer_attack(
        defense, pool_x, eval_x, eval_y, budget, acfg, oracle=oracle
    )
    oracle.dump_log(cfg.out / "query_log.jsonl")
    save_outcome(outcome, cfg.out / "outcome")
    save_weights(surrogate, cfg.out / "surrogate")
    gradient_deltas = {
        name: model.gradient_queries - grad_before[name] for name, model in members
    }
    metrics = {
        "model_id": f"defense[{defense.policy}]",
        "robust_accuracy": {outcome.attack: robust_accuracy(defense, outcome.x_adv, eval_y)},
        "success_rate": outcome.success_rate(),
        "queries_used": info["queries_used"],
        "labeled": info["labeled"],
        "exhausted": info["exhausted"],
        "defense_gradient_queries": gradient_deltas,  # must stay all-zero
    }
    budget_echo = _budget_echo(budget.epsilon, step_size=budget.step_size, steps=budget.steps)
    return _results(cfg, metrics, budget=budget_echo,
                    extra={"artifacts": {"query_log": "query_log.jsonl", "surrogate": "surrogate"}})


def _run_blackbox_query(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    members = [(m.get("name", f"member{i}"), load_model(m["path"]))
               for i, m in enumerate(raw["defense"]["members"])]
    defense = EnsembleDefense(members, policy=_get(raw, "defense.policy", default="majority_vote"),
                              seed=_get(raw, "defense.seed", default=cfg.seed))
    x, y = _dataset(raw, cfg.seed)
    samples = _get(raw, "samples", default=min(16, x.shape[0]))
    x, y = x[:samples], y[:samples]
    epsilon = float(raw["epsilon"])
    q = int(raw["per_sample_budget"])
    grad_before = {name: model.gradient_queries for name, model in members}
    oracle = QueryBudgetedOracle(defense, q * samples)
    outcome = hard_label_query_attack(oracle, x, y, epsilon, q, seed=cfg.seed)
    oracle.dump_log(cfg.out / "query_log.jsonl")
    save_outcome(outcome, cfg.out / "outcome")
    metrics = {
        "model_id": f"defense[{defense.policy}]",
        "robust_accuracy": {"hard_label_search": robust_accuracy(defense, outcome.x_adv, y)},
        "success_rate": outcome.success_rate(),
        "oracle_used": oracle.used,
        "queries_total": int(outcome.queries.sum()),
        "defense_gradient_queries": {
            name: model.gradient_queries - grad_before[name] for name, model in members
        },
    }
    return _results(cfg, metrics, budget=_budget_echo(epsilon, per_sample_budget=q),
                    extra={"artifacts": {"query_log": "query_log.jsonl"}})


def _run_regions(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    model = load_model(raw["model"]["path"])
    x, y = _dataset(raw, cfg.seed)
    index = _get(raw, "sample_index", default=0)
    grid = decision_region_grid(
        model,
        x[index],
        int(y[index]),
        radius=_get(raw, "radius", default=16),
        extent=_get(raw, "extent", default=0.5),
        seed=cfg.seed,
        normalize_g=_get(raw, "normalize_g", default=True),
        normalize_r=_get(raw, "normalize_r", default=True),
        image_id=str(index),
        model_id=_get(raw, "model.id", default=Path(raw["model"]["path"]).name),
    )
    save_grid(grid, cfg.out / "grid")
    grids = [grid]
    if _get(raw, "compare.path"):
        other = load_model(raw["compare"]["path"])
        grids.append(decision_region_grid(
            other, x[index], int(y[index]),
            radius=_get(raw, "radius", default=16),
            extent=_get(raw, "extent", default=0.5),
            seed=cfg.seed,
            image_id=str(index),
            model_id=Path(raw["compare"]["path"]).name,
        ))
    render_region_grid(grids, cfg.out / "grid.png")
    side = grid.labels.shape[0]
    counts = torch.bincount(grid.labels.flatten(), minlength=model.num_classes)
    metrics = {
        "model_id": grid.model_id,
        "center_label": grid.center_label,
        "grid_side": side,
        "label_fractions": {str(i): (c.item() / side**2) for i, c in enumerate(counts)},
    }
    return _results(cfg, metrics, budget=None,
                    extra={"artifacts": {"grid": "grid", "png": "grid.png"}})


def _run_fat(cfg: ExperimentConfig) -> dict:
    raw = cfg.raw
    x, y = _dataset(raw, cfg.seed)
    (xt, yt), (xv, yv) = _split(x, y, _get(raw, "dataset.train_fraction", default=0.75))
    if xv.shape[0] == 0:
        xv, yv = xt, yt
    model = _build_model(raw["model"], cfg.seed)
    if _get(raw, "pretrain_epochs", default=0):
        train_classifier(model, xt, yt, epochs=raw["pretrain_epochs"], seed=cfg.seed)
    fat_cfg = FatConfig(
        epsilon=float(raw["fat"]["epsilon"]),
        step_size=float(raw["fat"]["step_size"]),
        steps=int(raw["fat"]["steps"]),
        tau=int(raw["fat"]["tau"]),
    )
    train_cfg = FatTrainConfig(
        fat=fat_cfg,
        epochs=_get(raw, "train.epochs", default=10),
        lr=_get(raw, "train.lr", default=1e-3),
        batch_size=_get(raw, "train.batch_size", default=64),
        seed=cfg.seed,
        eval_steps=_get(raw, "eval.steps", default=20),
    )
    history = fat_train(model, xt, yt, train_cfg, eval_images=xv, eval_labels=yv)
    save_fat_history(history, cfg.out / "fat_history.csv")
    save_weights(model, cfg.out / "fat_model")
    metrics = {
        "model_id": f"fat[tau={fat_cfg.tau}]",
        "clean_accuracy": history[-1]["clean_acc"],
        "robust_accuracy": {"pgd": history[-1]["robust_acc"]},
        "tau": fat_cfg.tau,
        "steps": fat_cfg.steps,
    }
    budget = _budget_echo(fat_cfg.epsilon, step_size=fat_cfg.step_size, steps=fat_cfg.steps)
    return _results(cfg, metrics, budget=budget,
                    extra={"artifacts": {"history": "fat_history.csv", "weights": "fat_model"}})


_RUNNERS = {
    "train": _run_train,
    "attack": _run_attack,
    "saga": _run_saga,
    "transfer": _run_transfer,
    "ensemble-eval": _run_ensemble,
    "blackbox-adaptive": _run_blackbox_adaptive,
    "blackbox-query": _run_blackbox_query,
    "regions": _run_regions,
    "fat-train": _run_fat,
}


class SchemaMismatch(ValueError):
    pass


def summarize(result_paths: list[str | Path], out_csv: str | Path | None = None) -> str:
    """Merge results.json bundles into one model-by-attack table.

    Rows are model ids (sorted), columns clean accuracy plus every attack
    seen; missing cells stay blank. Mixed schema versions are an error.
    """
    rows: dict[str, dict] = {}
    attacks: set[str] = set()
    for path in result_paths:
        path = Path(path)
        if path.is_dir():
            path = path / "results.json"
        payload = json.loads(path.read_text())
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"{path}: schema {payload.get('schema_version')} != {SCHEMA_VERSION}")
        metrics = payload.get("metrics", {})
        model_id = metrics.get("model_id", path.parent.name)
        row = rows.setdefault(model_id, {})
        if "clean_accuracy" in metrics:
            row["clean"] = metrics["clean_accuracy"]
        for name, value in (metrics.get("robust_accuracy") or {}).items():
            row[name] = value
            attacks.add(name)
    columns = ["clean"] + sorted(attacks)
    header = ["model"] + columns
    lines = [",".join(header)]
    text_rows = []
    for model_id in sorted(rows):
        cells = [model_id]
        for col in columns:
            value = rows[model_id].get(col)
            cells.append("" if value is None else f"{value:.4f}")
        lines.append(",".join(cells))
        text_rows.append(cells)
    csv_text = "\n".join(lines) + "\n"
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(out_csv).write_text(csv_text)
    widths = [max(len(str(r[i])) for r in [header] + text_rows) for i in range(len(header))]
    pretty = []
    for r in [header] + text_rows:
        pretty.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(pretty)
