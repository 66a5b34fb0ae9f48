"""Session fixtures: the standard synthetic task and models trained on it.

Constants here pin the whole suite to one calibrated setup; many expected
values elsewhere were measured against exactly these seeds and sizes.
"""

import copy

import pytest
import torch

from tinyadv.attacks import PerturbationBudget, pgd, robust_accuracy
from tinyadv.defense import FatConfig, FatTrainConfig, fat_train
from tinyadv.models import (
    build_tiny_cnn,
    build_tiny_vit,
    make_stripes,
    save_dataset,
    save_weights,
    train_classifier,
)

AMPLITUDE = 0.15
NOISE = 0.17
TRAIN_N = 512
EVAL_N = 256
TRAIN_SEED = 10
EVAL_SEED = 11
TRAIN_EPOCHS = 40

VIT_SEED = 0
CNN_SEED = 1
VIT_COPY_SEED = 2

# The cliff budget: strong enough to floor both undefended models.
STANDARD_BUDGET = PerturbationBudget(epsilon=0.1, step_size=0.02, steps=20)

# Friendly-training sweep settings; epsilon sits below the point where
# full-strength adversarial batches stop being learnable on this task.
FAT_TAUS = (0, 5, 10)
FAT_CONFIG = dict(epsilon=0.08, step_size=0.016, steps=10)
FAT_EPOCHS = 15
FAT_LR = 2e-4
FAT_EVAL_N = 1024


@pytest.fixture(scope="session")
def standard_budget():
    return STANDARD_BUDGET


@pytest.fixture(scope="session")
def train_set():
    return make_stripes(TRAIN_N, amplitude=AMPLITUDE, noise=NOISE, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def eval_set():
    return make_stripes(EVAL_N, amplitude=AMPLITUDE, noise=NOISE, seed=EVAL_SEED)


def _train(model, train_set, seed):
    images, labels = train_set
    train_classifier(model, images, labels, epochs=TRAIN_EPOCHS, seed=seed)
    return model


@pytest.fixture(scope="session")
def trained_vit(train_set):
    return _train(build_tiny_vit(seed=VIT_SEED), train_set, VIT_SEED)


@pytest.fixture(scope="session")
def trained_cnn(train_set):
    return _train(build_tiny_cnn(seed=CNN_SEED), train_set, CNN_SEED)


@pytest.fixture(scope="session")
def trained_vit_copy(train_set):
    return _train(build_tiny_vit(seed=VIT_COPY_SEED), train_set, VIT_COPY_SEED)


@pytest.fixture(scope="session")
def model_store(tmp_path_factory, train_set, eval_set, trained_vit, trained_cnn, trained_vit_copy):
    """Weights and datasets on disk, as the CLI and IO tests expect them."""
    root = tmp_path_factory.mktemp("store")
    save_weights(trained_vit, root / "vit")
    save_weights(trained_cnn, root / "cnn")
    save_weights(trained_vit_copy, root / "vit_copy")
    save_dataset(*train_set, root / "train")
    save_dataset(*eval_set, root / "eval")
    return root


@pytest.fixture(scope="session")
def fat_sweep(train_set):
    """Friendly-training runs at tau 0, K/2 and K from one warmed-up start.

    Heavyweight fixture: builds once per session and feeds both the training
    direction tests and the fat-versus-plain robustness comparison. Final
    accuracies are averaged over the last three epochs to smooth batch noise.
    """
    images, labels = train_set
    eval_images, eval_labels = make_stripes(
        FAT_EVAL_N, amplitude=AMPLITUDE, noise=NOISE, seed=EVAL_SEED
    )
    base = build_tiny_cnn(seed=CNN_SEED)
    train_classifier(base, images, labels, epochs=TRAIN_EPOCHS, seed=CNN_SEED)

    results = {"taus": {}}
    eval_budget = None
    for tau in FAT_TAUS:
        model = copy.deepcopy(base)
        cfg = FatTrainConfig(
            fat=FatConfig(tau=tau, **FAT_CONFIG),
            epochs=FAT_EPOCHS,
            lr=FAT_LR,
            seed=0,
        )
        eval_budget = cfg.eval_budget
        history = fat_train(model, images, labels, cfg,
                            eval_images=eval_images, eval_labels=eval_labels)
        tail = history[-3:]
        results["taus"][tau] = {
            "clean": sum(h["clean_acc"] for h in tail) / len(tail),
            "robust": sum(h["robust_acc"] for h in tail) / len(tail),
            "model": model,
            "history": history,
        }

    plain_adv = pgd(base, eval_images, eval_labels, eval_budget)
    results["plain_clean"] = base.accuracy(eval_images, eval_labels)
    results["plain_robust"] = robust_accuracy(base, plain_adv.x_adv, eval_labels)
    results["eval_budget"] = eval_budget
    results["eval_set"] = (eval_images, eval_labels)
    results["plain_model"] = base
    return results
