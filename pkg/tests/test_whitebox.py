"""Gradient attacks checked against hand calculus on scalar surrogates."""

import copy

import pytest
import torch

from helpers import ScalarSurrogate
from tinyadv.attacks import (
    ApgdController,
    ApgdSchedule,
    CwConfig,
    PerturbationBudget,
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
    robust_accuracy,
)


def scalar_input(value):
    return torch.full((1, 1, 1, 1), float(value))


class TestFgsm:
    def test_zero_epsilon_returns_input(self, trained_cnn):
        x = torch.rand(4, *trained_cnn.input_shape, generator=torch.Generator().manual_seed(0))
        y = torch.zeros(4, dtype=torch.int64)
        out = fgsm(trained_cnn, x, y, 0.0)
        assert torch.equal(out.x_adv, x)

    def test_ascends_scalar_parabola(self):
        # L(s) = (s + 0.5)^2 has gradient +2 at s=0.5, so the signed step adds epsilon.
        model = ScalarSurrogate(lambda s: (s + 0.5) ** 2)
        out = fgsm(model, scalar_input(0.5), torch.tensor([0]), 0.1)
        assert out.x_adv.item() == pytest.approx(0.6, abs=1e-6)

    def test_zero_gradient_leaves_input(self):
        model = ScalarSurrogate(lambda s: torch.ones_like(s))
        x = scalar_input(0.3)
        out = fgsm(model, x, torch.tensor([0]), 0.1)
        assert torch.equal(out.x_adv, x)


class TestPgd:
    def test_single_step_matches_fgsm(self, trained_vit):
        gen = torch.Generator().manual_seed(1)
        x = torch.rand(4, *trained_vit.input_shape, generator=gen)
        y = torch.randint(0, 2, (4,), generator=gen)
        budget = PerturbationBudget(epsilon=0.05, step_size=0.05, steps=1)
        assert torch.equal(pgd(trained_vit, x, y, budget).x_adv, fgsm(trained_vit, x, y, 0.05).x_adv)

    def test_scalar_ascent_projects_onto_ball(self):
        # L(s) = (s + 1)^2 always climbs: 0 -> 0.2 -> 0.4 -> 0.6, projected to 0.5.
        model = ScalarSurrogate(lambda s: (s + 1.0) ** 2)
        budget = PerturbationBudget(epsilon=0.5, step_size=0.2, steps=3)
        out = pgd(model, scalar_input(0.0), torch.tensor([0]), budget)
        assert out.x_adv.item() == pytest.approx(0.5, abs=1e-6)

    def test_scalar_descent_stops_at_pixel_floor(self):
        # Gradient is negative near 0.2 for L(s) = (s - 3)^2; iterates clip at 0.
        model = ScalarSurrogate(lambda s: (s - 3.0) ** 2)
        budget = PerturbationBudget(epsilon=0.5, step_size=0.2, steps=3)
        out = pgd(model, scalar_input(0.2), torch.tensor([0]), budget)
        assert out.x_adv.item() == pytest.approx(0.0, abs=1e-6)

    def test_zero_epsilon_pins_iterates(self, trained_cnn):
        x = torch.rand(3, *trained_cnn.input_shape, generator=torch.Generator().manual_seed(2))
        y = torch.zeros(3, dtype=torch.int64)
        budget = PerturbationBudget(epsilon=0.0, step_size=0.01, steps=5)
        assert torch.equal(pgd(trained_cnn, x, y, budget).x_adv, x)

    def test_random_start_stays_in_ball_and_is_seeded(self, trained_cnn):
        x = torch.rand(3, *trained_cnn.input_shape, generator=torch.Generator().manual_seed(3))
        y = torch.zeros(3, dtype=torch.int64)
        budget = PerturbationBudget(epsilon=0.1, step_size=0.02, steps=2, random_start=True)
        a = pgd(trained_cnn, x, y, budget, generator=torch.Generator().manual_seed(7))
        b = pgd(trained_cnn, x, y, budget, generator=torch.Generator().manual_seed(7))
        assert torch.equal(a.x_adv, b.x_adv)
        assert (a.x_adv - x).abs().max().item() <= 0.1 + 1e-6


class TestMim:
    def test_zero_decay_matches_iterated_sign_steps(self):
        # With decay=0 the momentum is just the normalized current gradient,
        # whose sign equals the gradient sign: plain iterative FGSM.
        model = ScalarSurrogate(lambda s: (s + 1.0) ** 2)
        budget = PerturbationBudget(epsilon=0.5, step_size=0.2, steps=3)
        out = mim(model, scalar_input(0.0), torch.tensor([0]), budget, decay=0.0)
        ref = pgd(model, scalar_input(0.0), torch.tensor([0]), budget)
        assert torch.equal(out.x_adv, ref.x_adv)

    def test_unit_gradient_accumulates_full_displacement(self):
        # L(s) = s + 2 has constant gradient +1 everywhere on the path, so
        # two momentum steps displace by exactly 2 * step_size.
        model = ScalarSurrogate(lambda s: s + 2.0)
        budget = PerturbationBudget(epsilon=0.5, step_size=0.15, steps=2)
        out = mim(model, scalar_input(0.1), torch.tensor([0]), budget, decay=1.0)
        assert out.x_adv.item() == pytest.approx(0.4, abs=1e-6)

    def test_zero_gradient_is_stationary(self):
        model = ScalarSurrogate(lambda s: torch.ones_like(s))
        budget = PerturbationBudget(epsilon=0.3, step_size=0.1, steps=4)
        x = scalar_input(0.5)
        out = mim(model, x, torch.tensor([0]), budget)
        assert torch.equal(out.x_adv, x)


class TestCw:
    def test_zero_steps_keeps_interior_input(self):
        model = ScalarSurrogate(lambda s: s + 1.0)
        cfg = CwConfig(steps=0, binary_search_rounds=1)
        x = scalar_input(0.4)
        out = cw(model, x, torch.tensor([0]), 0.1, cfg)
        assert torch.allclose(out.x_adv, x, atol=1e-6)

    def test_outputs_strictly_interior_on_real_model(self, trained_cnn, eval_set):
        x, y = eval_set[0][:16], eval_set[1][:16]
        out = cw(trained_cnn, x, y, 0.3, CwConfig(steps=20, binary_search_rounds=3))
        assert out.x_adv.min().item() > 0.0
        assert out.x_adv.max().item() < 1.0
        assert (out.x_adv - x).abs().max().item() <= 0.3 + 1e-6

    def test_tiny_ball_failure_is_reported_not_raised(self, trained_cnn, eval_set):
        x, y = eval_set[0][:8], eval_set[1][:8]
        out = cw(trained_cnn, x, y, 1e-5, CwConfig(steps=5, binary_search_rounds=2))
        assert (out.x_adv - x).abs().max().item() <= 1e-5 + 1e-6

    def test_targeted_requires_targets(self, trained_cnn, eval_set):
        x, y = eval_set[0][:4], eval_set[1][:4]
        with pytest.raises(ValueError):
            cw(trained_cnn, x, y, 0.1, CwConfig(targeted=True))


class TestApgd:
    def test_default_checkpoints_for_twenty_steps(self):
        assert apgd_checkpoints(20) == [5, 9, 12, 14, 16, 18, 19, 20]

    def test_default_checkpoints_for_hundred_steps(self):
        assert apgd_checkpoints(100) == [22, 41, 57, 70, 80, 87, 93, 99, 100]

    def test_checkpoints_strictly_increasing_and_end_at_n(self):
        for n in (7, 33, 64, 250):
            pts = apgd_checkpoints(n)
            assert pts == sorted(set(pts))
            assert pts[-1] == n

    def test_controller_keeps_step_while_progress_holds(self):
        c = ApgdController(rho=0.75)
        # 8 of 8 improved and the best objective moved: neither branch fires.
        halve = c.should_halve(8.0, 8, eta_prev=0.02, eta_now=0.02, fmax_prev=1.0, fmax_now=1.5)
        assert not bool(halve)

    def test_controller_halves_on_stalled_window(self):
        c = ApgdController(rho=0.75)
        # only 1 of 8 improved: branch (a).
        assert bool(c.should_halve(1.0, 8, 0.02, 0.01, 1.0, 1.5))

    def test_controller_halves_on_frozen_step_and_objective(self):
        c = ApgdController(rho=0.75)
        # 6 of 8 improved clears rho, but eta and the best both froze: branch (b).
        assert bool(c.should_halve(6.0, 8, 0.02, 0.02, 1.5, 1.5))

    def test_controller_is_elementwise(self):
        c = ApgdController(rho=0.75)
        out = c.should_halve(
            torch.tensor([8.0, 1.0]),
            8,
            torch.tensor([0.02, 0.02]),
            torch.tensor([0.02, 0.02]),
            torch.tensor([1.0, 1.0]),
            torch.tensor([1.5, 1.5]),
        )
        assert out.tolist() == [False, True]

    def test_count_improvements(self):
        assert count_improvements([1.0, 2.0, 2.0, 1.5, 3.0]) == 2
        assert count_improvements([5.0]) == 0

    def test_apgd_conforms_and_beats_clean_loss(self, trained_cnn, eval_set):
        x, y = eval_set[0][:16], eval_set[1][:16]
        budget = PerturbationBudget(epsilon=0.1, step_size=0.02, steps=20)
        out = apgd(trained_cnn, x, y, budget)
        assert (out.x_adv - x).abs().max().item() <= 0.1 + 1e-6
        clean = robust_accuracy(trained_cnn, x, y)
        attacked = robust_accuracy(trained_cnn, out.x_adv, y)
        assert attacked <= clean


class TestBpda:
    def test_identity_surrogate_equals_pgd_on_differentiable_stack(self, trained_cnn, eval_set):
        x, y = eval_set[0][:8], eval_set[1][:8]
        smooth = PreprocessedClassifier(lambda t: t * 0.9 + 0.05, trained_cnn, name="affine")
        budget = PerturbationBudget(epsilon=0.08, step_size=0.02, steps=5)
        via_bpda = bpda(smooth, lambda t: t * 0.9 + 0.05, x, y, budget)
        via_pgd = pgd(smooth, x, y, budget)
        assert torch.equal(via_bpda.x_adv, via_pgd.x_adv)

    def test_straight_through_beats_flat_gradient_on_quantizer(self, trained_cnn, eval_set):
        x, y = eval_set[0][:32], eval_set[1][:32]
        guarded = PreprocessedClassifier(quantize_pixels, trained_cnn, name="quantized")
        budget = PerturbationBudget(epsilon=0.1, step_size=0.02, steps=20)
        plain = pgd(guarded, x, y, budget)
        assert (plain.x_adv - x).abs().max().item() == 0.0
        through = bpda(guarded, lambda t: t, x, y, budget)
        assert through.success_rate() > plain.success_rate()

    def test_quantizer_is_piecewise_constant(self):
        x = torch.linspace(0, 1, 50).view(1, 1, 5, 10)
        q = quantize_pixels(x, levels=8)
        assert set(torch.unique(q * 7).tolist()) <= set(range(8))
        assert torch.equal(quantize_pixels(q, levels=8), q)
