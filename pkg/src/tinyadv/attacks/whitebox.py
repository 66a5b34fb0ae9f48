"""White-box attacks: FGSM, PGD, MIM, C&W, APGD and BPDA."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import torch
import torch.nn.functional as F

from ..models.base import DifferentiableClassifier, ImageBatch, LabelBatch, loss_gradient
from .core import AttackOutcome, PerturbationBudget, constrain


def _outcome(model, x_adv, y, name, epsilon, queries, params, targets=None) -> AttackOutcome:
    labels = model.predict(x_adv)
    if targets is None:
        success = labels != y
    else:
        success = labels == targets
    if isinstance(queries, int):
        queries = torch.full((x_adv.shape[0],), queries, dtype=torch.int64)
    return AttackOutcome(
        x_adv=x_adv.detach(),
        success=success,
        queries=queries,
        attack=name,
        epsilon=float(epsilon),
        params=params,
    )


def fgsm(model: DifferentiableClassifier, x: ImageBatch, y: LabelBatch, epsilon: float) -> AttackOutcome:
    """Single signed-gradient step of size epsilon."""
    x0 = x.detach().clone()
    g = loss_gradient(model, x0, y)
    x_adv = constrain(x0 + epsilon * torch.sign(g), x0, epsilon)
    return _outcome(model, x_adv, y, "fgsm", epsilon, 1, {"epsilon": epsilon})


def pgd(
    model: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    budget: PerturbationBudget,
    generator: torch.Generator | None = None,
) -> AttackOutcome:
    """Projected signed-gradient ascent on the cross-entropy.

    Every iterate is projected onto the epsilon-ball and clipped to the pixel
    box. With steps=1, step_size=epsilon and no random start this reproduces
    fgsm bit for bit.
    """
    x0 = x.detach().clone()
    xt = x0.clone()
    if budget.random_start:
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        noise = torch.empty_like(xt).uniform_(-budget.epsilon, budget.epsilon, generator=generator)
        xt = constrain(x0 + noise, x0, budget.epsilon)
    for _ in range(budget.steps):
        g = loss_gradient(model, xt, y)
        xt = constrain(xt + budget.step_size * torch.sign(g), x0, budget.epsilon)
    return _outcome(model, xt, y, "pgd", budget.epsilon, budget.steps, budget.as_dict())


@dataclass
class MimState:
    """Accumulated momentum and current iterate of a MIM run."""

    momentum: torch.Tensor
    x: torch.Tensor
    step: int = 0


def mim_step(
    model: DifferentiableClassifier,
    state: MimState,
    x0: ImageBatch,
    y: LabelBatch,
    budget: PerturbationBudget,
    decay: float,
) -> MimState:
    g = loss_gradient(model, state.x, y)
    l1 = g.abs().flatten(1).sum(dim=1).view(-1, 1, 1, 1)
    # 0/0 is defined as 0 here, matching the sign(0)=0 convention downstream.
    normed = torch.where(l1 > 0, g / l1.clamp(min=torch.finfo(g.dtype).tiny), torch.zeros_like(g))
    momentum = decay * state.momentum + normed
    x_new = constrain(state.x + budget.step_size * torch.sign(momentum), x0, budget.epsilon)
    return MimState(momentum=momentum, x=x_new, step=state.step + 1)


def mim(
    model: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    budget: PerturbationBudget,
    decay: float = 1.0,
) -> AttackOutcome:
    """Momentum iterative method: L1-normalized gradients folded into a
    running direction, signed step on the accumulated momentum.

    decay=0 keeps no history and degenerates to iterative FGSM.
    """
    x0 = x.detach().clone()
    state = MimState(momentum=torch.zeros_like(x0), x=x0.clone())
    for _ in range(budget.steps):
        state = mim_step(model, state, x0, y, budget, decay)
    params = dict(budget.as_dict(), decay=decay)
    return _outcome(model, state.x, y, "mim", budget.epsilon, budget.steps, params)


@dataclass(frozen=True)
class CwConfig:
    """Margin-loss attack settings.

    confidence is the kappa floor of the margin term, steps the optimizer
    iterations per binary-search round over the trade-off constant c.
    """

    confidence: float = 50.0
    learning_rate: float = 0.01
    steps: int = 30
    binary_search_rounds: int = 6
    c_init: float = 1.0
    targeted: bool = False
    interior_margin: float = 1e-6


def _cw_margin(logits: torch.Tensor, y: LabelBatch, targeted: bool, kappa: float) -> torch.Tensor:
    onehot = F.one_hot(y, logits.shape[1]).bool()
    own = logits[onehot].view(-1)
    other = logits.masked_fill(onehot, float("-inf")).max(dim=1).values
    if targeted:
        margin = other - own  # y holds the target class here
    else:
        margin = own - other
    return torch.clamp(margin, min=-kappa)


def cw(
    model: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    epsilon: float,
    cfg: CwConfig = CwConfig(),
    targets: LabelBatch | None = None,
) -> AttackOutcome:
    """L2 margin attack in tanh space with binary search over c.

    The optimizer works unconstrained; the reported perturbation is clamped
    into the epsilon-ball at the end for comparability with the other
    attacks. Pixels stay strictly inside (0, 1): the tanh parameterization
    never reaches the walls and the final clamp bounds are pulled inside by
    interior_margin. A sample whose search never succeeds yields an
    unsuccessful outcome, not an error.
    """
    if cfg.targeted and targets is None:
        raise ValueError("targeted cw needs target labels")
    labels = targets if cfg.targeted else y
    x0 = x.detach().clone()
    w0 = torch.atanh(torch.clamp(2.0 * x0 - 1.0, -1.0 + 1e-6, 1.0 - 1e-6))
    b = x0.shape[0]

    c = torch.full((b,), cfg.c_init)
    c_low = torch.zeros(b)
    c_high = torch.full((b,), float("inf"))
    best = x0.clone()
    best_l2 = torch.full((b,), float("inf"))
    ever = torch.zeros(b, dtype=torch.bool)
    last = x0.clone()

    for _ in range(cfg.binary_search_rounds):
        w = w0.clone().requires_grad_(True)
        opt = torch.optim.Adam([w], lr=cfg.learning_rate)
        round_hit = torch.zeros(b, dtype=torch.bool)
        for _ in range(cfg.steps):
            x_t = 0.5 * (torch.tanh(w) + 1.0)
            logits = model(x_t)
            l2 = (x_t - x0).flatten(1).pow(2).sum(dim=1)
            margin = _cw_margin(logits, labels, cfg.targeted, cfg.confidence)
            loss = (l2 + c * margin).sum()
            # grad taken on w alone so model parameter .grad slots stay clean
            (w.grad,) = torch.autograd.grad(loss, [w])
            opt.step()
            model.gradient_queries += 1
            with torch.no_grad():
                pred = logits.argmax(dim=1)
                hit = (pred == labels) if cfg.targeted else (pred != labels)
                round_hit |= hit
                better = hit & (l2 < best_l2)
                best[better] = x_t.detach()[better]
                best_l2[better] = l2.detach()[better]
                last = x_t.detach()
        ever |= round_hit
        # Classic bracket update: shrink c on success, grow it on failure.
        c_high = torch.where(round_hit, torch.minimum(c_high, c), c_high)
        c_low = torch.where(round_hit, c_low, torch.maximum(c_low, c))
        c = torch.where(torch.isinf(c_high), c * 10.0, 0.5 * (c_low + c_high))

    x_adv = torch.where(ever.view(-1, 1, 1, 1), best, last)
    m = cfg.interior_margin
    lo = torch.clamp(x0 - epsilon, min=m)
    hi = torch.clamp(x0 + epsilon, max=1.0 - m)
    x_adv = torch.minimum(torch.maximum(x_adv, lo), hi)

    queries = cfg.binary_search_rounds * cfg.steps
    params = {
        "confidence": cfg.confidence,
        "learning_rate": cfg.learning_rate,
        "steps": cfg.steps,
        "binary_search_rounds": cfg.binary_search_rounds,
        "targeted": cfg.targeted,
        "epsilon": epsilon,
    }
    return _outcome(model, x_adv, y, "cw", epsilon, queries, params,
                    targets=targets if cfg.targeted else None)


@dataclass(frozen=True)
class ApgdSchedule:
    """Checkpoint spacing and halving threshold for the adaptive attack."""

    rho: float = 0.75
    p_first: float = 0.22
    p_shrink: float = 0.03
    p_floor: float = 0.06


def apgd_checkpoints(n_iter: int, schedule: ApgdSchedule = ApgdSchedule()) -> list[int]:
    """Decision iterations: ceil(p_j * n_iter) with the shrinking-gap recursion.

    The p_j recursion runs on exact rationals; accumulated float error would
    otherwise shift ceil() boundaries by one.
    """
    first = Fraction(str(schedule.p_first))
    shrink = Fraction(str(schedule.p_shrink))
    floor = Fraction(str(schedule.p_floor))
    ps = [Fraction(0), first]
    while math.ceil(ps[-1] * n_iter) < n_iter:
        ps.append(ps[-1] + max(ps[-1] - ps[-2] - shrink, floor))
    points: list[int] = []
    for p in ps[1:]:
        w = min(math.ceil(p * n_iter), n_iter)
        if w > 0 and (not points or w > points[-1]):
            points.append(w)
    return points


class ApgdController:
    """Step-halving rule evaluated at every checkpoint.

    Halve when (a) fewer than rho * window_len iterations of the closing
    window improved the objective, or (b) the step survived the previous
    checkpoint unchanged and the best objective did not move either.
    """

    def __init__(self, rho: float = 0.75):
        self.rho = rho

    def should_halve(self, improvements, window_len, eta_prev, eta_now, fmax_prev, fmax_now):
        improvements = torch.as_tensor(improvements, dtype=torch.float64)
        eta_prev = torch.as_tensor(eta_prev, dtype=torch.float64)
        eta_now = torch.as_tensor(eta_now, dtype=torch.float64)
        fmax_prev = torch.as_tensor(fmax_prev, dtype=torch.float64)
        fmax_now = torch.as_tensor(fmax_now, dtype=torch.float64)
        cond_a = improvements < self.rho * float(window_len)
        cond_b = (eta_now == eta_prev) & (fmax_now == fmax_prev)
        return cond_a | cond_b


def count_improvements(losses: list[float] | torch.Tensor) -> int:
    """Number of strict increases along a scalar loss trajectory."""
    seq = torch.as_tensor(losses, dtype=torch.float64)
    return int((seq[1:] > seq[:-1]).sum().item())


def apgd(
    model: DifferentiableClassifier,
    x: ImageBatch,
    y: LabelBatch,
    budget: PerturbationBudget,
    schedule: ApgdSchedule = ApgdSchedule(),
) -> AttackOutcome:
    """Signed-gradient ascent with an adaptive, per-sample step size.

    No momentum. At each checkpoint the controller may halve a sample's step
    and restart it from its best iterate so far.
    """

    def batch_loss(xt):
        with torch.no_grad():
            return F.cross_entropy(model(xt), y, reduction="none")

    x0 = x.detach().clone()
    b = x0.shape[0]
    xt = x0.clone()
    eta = torch.full((b, 1, 1, 1), budget.step_size)
    controller = ApgdController(schedule.rho)
    checkpoints = apgd_checkpoints(budget.steps, schedule)

    f_prev = batch_loss(xt)
    f_best = f_prev.clone()
    x_best = xt.clone()
    improvements = torch.zeros(b)
    window_start = 0
    ck_eta = eta.view(b).clone()
    ck_fbest = f_best.clone()
    ck_index = 0

    for i in range(1, budget.steps + 1):
        g = loss_gradient(model, xt, y)
        xt = constrain(xt + eta * torch.sign(g), x0, budget.epsilon)
        f_new = batch_loss(xt)
        improvements += (f_new > f_prev).float()
        better = f_new > f_best
        f_best = torch.where(better, f_new, f_best)
        x_best = torch.where(better.view(-1, 1, 1, 1), xt, x_best)
        f_prev = f_new

        if ck_index < len(checkpoints) and i == checkpoints[ck_index]:
            window_len = i - window_start
            halve = controller.should_halve(
                improvements, window_len, ck_eta, eta.view(b), ck_fbest, f_best
            )
            mask = halve.view(-1, 1, 1, 1)
            eta = torch.where(mask, eta / 2.0, eta)
            xt = torch.where(mask, x_best, xt)
            f_prev = torch.where(halve, f_best, f_prev)
            ck_eta = eta.view(b).clone()
            ck_fbest = f_best.clone()
            improvements = torch.zeros(b)
            window_start = i
            ck_index += 1

    final = torch.where((f_best > f_prev).view(-1, 1, 1, 1), x_best, xt)
    params = dict(budget.as_dict(), rho=schedule.rho)
    return _outcome(model, final, y, "apgd", budget.epsilon, budget.steps, params)


class PreprocessedClassifier(DifferentiableClassifier):
    """Forward-exact stack of an input transform and a base classifier.

    The transform may be non-differentiable (quantization and the like);
    bpda substitutes a surrogate for it on the backward pass only.
    """

    def __init__(self, preprocess, base: DifferentiableClassifier, name: str = "preprocessed"):
        arch = {"kind": name, "config": {"base": base.arch}}
        super().__init__(arch, base.input_shape, base.num_classes)
        self.preprocess = preprocess
        self.base = base

    def forward(self, x: ImageBatch) -> torch.Tensor:
        return self.base(self.preprocess(x))


def quantize_pixels(x: torch.Tensor, levels: int = 8) -> torch.Tensor:
    """Uniform pixel quantization; piecewise constant, so autograd sees zero slope."""
    return torch.round(x * (levels - 1)) / (levels - 1)


def bpda(
    model: PreprocessedClassifier,
    surrogate,
    x: ImageBatch,
    y: LabelBatch,
    budget: PerturbationBudget,
) -> AttackOutcome:
    """Backward-pass differentiable approximation.

    Forward always evaluates the true preprocess; gradients flow through the
    surrogate via a straight-through composition. With a differentiable
    preprocess passed as its own surrogate this reproduces pgd exactly.
    """
    x0 = x.detach().clone()
    xt = x0.clone()
    for _ in range(budget.steps):
        leaf = xt.detach().clone().requires_grad_(True)
        z_sur = surrogate(leaf)
        with torch.no_grad():
            z_true = model.preprocess(leaf.detach())
        z = z_sur + (z_true - z_sur).detach()
        loss = F.cross_entropy(model.base(z), y, reduction="sum")
        (g,) = torch.autograd.grad(loss, leaf)
        model.gradient_queries += 1
        xt = constrain(xt + budget.step_size * torch.sign(g), x0, budget.epsilon)
    return _outcome(model, xt, y, "bpda", budget.epsilon, budget.steps, budget.as_dict())
