"""Budget plumbing: projections, outcome records, conformance, scoring."""

import pytest
import torch

from helpers import FixedLabelModel
from tinyadv.attacks import (
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


class TestPerturbationBudget:
    def test_valid_budget_round_trips_to_dict(self):
        budget = PerturbationBudget(epsilon=0.1, step_size=0.01, steps=20)
        d = budget.as_dict()
        assert d["epsilon"] == 0.1 and d["steps"] == 20 and d["norm"] == "linf"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epsilon": -0.1, "step_size": 0.01},
            {"epsilon": 0.1, "step_size": 0.0},
            {"epsilon": 0.1, "step_size": 0.01, "steps": 0},
            {"epsilon": 0.1, "step_size": 0.01, "norm": "l2"},
        ],
    )
    def test_invalid_budgets_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PerturbationBudget(**kwargs)


class TestProjection:
    def test_inside_ball_unchanged(self):
        gen = torch.Generator().manual_seed(0)
        x_ref = torch.rand(4, 1, 8, 8, generator=gen)
        delta = (torch.rand(4, 1, 8, 8, generator=gen) - 0.5) * 0.1
        x = x_ref + delta
        assert torch.equal(project_linf(x, x_ref, 0.05), torch.clamp(x, x_ref - 0.05, x_ref + 0.05))
        inside = x_ref + delta.clamp(-0.04, 0.04)
        assert torch.equal(project_linf(inside, x_ref, 0.05), inside)

    def test_scalar_projection_arithmetic(self):
        x_ref = torch.tensor([0.5])
        assert project_linf(torch.tensor([0.9]), x_ref, 0.1).item() == pytest.approx(0.6)

    def test_projection_is_idempotent(self):
        gen = torch.Generator().manual_seed(1)
        for _ in range(5):
            x_ref = torch.rand(8, generator=gen)
            x = torch.rand(8, generator=gen) * 3 - 1
            once = project_linf(x, x_ref, 0.2)
            assert torch.equal(project_linf(once, x_ref, 0.2), once)

    def test_pixel_clip_cases(self):
        assert clip_pixels(torch.tensor([-0.2])).item() == 0.0
        assert clip_pixels(torch.tensor([1.7])).item() == 1.0
        assert clip_pixels(torch.tensor([0.4])).item() == pytest.approx(0.4)

    def test_constrain_lands_in_ball_and_box(self):
        gen = torch.Generator().manual_seed(2)
        x_ref = torch.rand(16, generator=gen)
        x = torch.rand(16, generator=gen) * 4 - 2
        out = constrain(x, x_ref, 0.3)
        assert (out - x_ref).abs().max().item() <= 0.3 + BALL_TOLERANCE
        assert out.min().item() >= 0.0 and out.max().item() <= 1.0


class TestOutcome:
    def _outcome(self):
        gen = torch.Generator().manual_seed(3)
        return AttackOutcome(
            x_adv=torch.rand(3, 1, 4, 4, generator=gen),
            success=torch.tensor([True, False, True]),
            queries=torch.tensor([5, 5, 5]),
            attack="pgd",
            epsilon=0.1,
            params={"steps": 5},
            member_success={"a": torch.tensor([True, True, False])},
        )

    def test_success_rate(self):
        assert self._outcome().success_rate() == pytest.approx(2 / 3)

    def test_save_load_round_trip(self, tmp_path):
        outcome = self._outcome()
        save_outcome(outcome, tmp_path / "o")
        loaded = load_outcome(tmp_path / "o")
        assert torch.equal(outcome.x_adv, loaded.x_adv)
        assert torch.equal(outcome.success, loaded.success)
        assert torch.equal(outcome.queries, loaded.queries)
        assert loaded.attack == "pgd" and loaded.epsilon == 0.1
        assert torch.equal(outcome.member_success["a"], loaded.member_success["a"])

    def test_load_rejects_blob_shape_mismatch(self, tmp_path):
        outcome = self._outcome()
        save_outcome(outcome, tmp_path / "o")
        blob = tmp_path / "o.bin"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(ValueError):
            load_outcome(tmp_path / "o")


class TestConformance:
    def test_report_flags_ball_violation(self):
        x = torch.full((2, 1, 2, 2), 0.5)
        report = conformance_report(x + 0.2, x, epsilon=0.1)
        assert not report["within_ball"] and report["within_box"]
        with pytest.raises(AssertionError):
            assert_conformant(x + 0.2, x, 0.1)

    def test_report_flags_box_violation(self):
        x = torch.full((1, 1, 2, 2), 0.5)
        bad = x.clone()
        bad[0, 0, 0, 0] = 1.2
        report = conformance_report(bad, x, epsilon=1.0)
        assert report["within_ball"] and not report["within_box"]

    def test_tolerance_absorbs_float_slack(self):
        x = torch.full((1, 1, 2, 2), 0.5)
        assert_conformant(x + 0.1 + 5e-7, x, 0.1)  # inside the shared tolerance


class TestRobustAccuracy:
    def test_identity_attack_scores_full(self):
        labels = torch.tensor([0, 1, 0, 1])
        model = FixedLabelModel(labels)
        x = torch.zeros(4, 1, 1, 1)
        assert robust_accuracy(model, x, labels) == 1.0

    def test_handcrafted_seven_of_ten(self):
        y = torch.zeros(10, dtype=torch.int64)
        predicted = torch.tensor([0, 0, 0, 0, 0, 0, 0, 1, 1, 1])
        model = FixedLabelModel(predicted)
        assert robust_accuracy(model, torch.zeros(10, 1, 1, 1), y) == pytest.approx(0.7)

    def test_flagged_labels_never_count_correct(self):
        y = torch.tensor([0, 1])

        class Flagging:
            def predict(self, x):
                return torch.tensor([-1, 1])

        assert robust_accuracy(Flagging(), torch.zeros(2, 1, 1, 1), y) == pytest.approx(0.5)

    def test_empty_batch_rejected(self):
        model = FixedLabelModel(torch.zeros(0, dtype=torch.int64))
        with pytest.raises(ValueError):
            robust_accuracy(model, torch.zeros(0, 1, 1, 1), torch.zeros(0, dtype=torch.int64))
