"""Decision-region slices along the gradient and an orthogonal direction."""

import csv
import json

import pytest
import torch

from helpers import LinearToyModel
from tinyadv.regions import (
    RegionGrid,
    decision_region_grid,
    orthogonal_direction,
    render_region_grid,
    save_grid,
)


class TestOrthogonalDirection:
    def test_orthogonality_and_unit_norm(self):
        gen = torch.Generator().manual_seed(0)
        for seed in range(5):
            g = torch.randn(1, 4, 4, generator=gen)
            r = orthogonal_direction(g, seed=seed)
            assert abs(torch.dot(g.flatten(), r.flatten()).item()) <= 1e-6
            assert r.flatten().norm().item() == pytest.approx(1.0, abs=1e-6)
            assert r.shape == g.shape

    def test_seeded_determinism(self):
        g = torch.randn(1, 3, 3, generator=torch.Generator().manual_seed(1))
        assert torch.equal(orthogonal_direction(g, seed=4), orthogonal_direction(g, seed=4))
        assert not torch.equal(orthogonal_direction(g, seed=4), orthogonal_direction(g, seed=5))

    def test_two_pixel_complement_is_forced(self):
        # In two dimensions the orthogonal complement of (1, 0) is the y axis.
        r = orthogonal_direction(torch.tensor([[[1.0, 0.0]]]), seed=0)
        assert abs(r.flatten()[0].item()) <= 1e-6
        assert abs(abs(r.flatten()[1].item()) - 1.0) <= 1e-6

    def test_zero_gradient_rejected(self):
        with pytest.raises(ValueError):
            orthogonal_direction(torch.zeros(1, 2, 2))


class TestRegionGrid:
    def _linear(self):
        w = torch.full((16,), 1.0 / 16.0)
        model = LinearToyModel(w, b=-0.545, input_shape=(1, 4, 4))
        image = torch.full((1, 4, 4), 0.5)
        return model, image

    def test_shape_and_axes(self):
        model, image = self._linear()
        grid = decision_region_grid(model, image, label=0, radius=16, extent=0.3)
        assert grid.labels.shape == (33, 33)
        assert grid.radius == 16
        assert grid.xs[0].item() == pytest.approx(-0.3)
        assert grid.xs[-1].item() == pytest.approx(0.3)
        assert torch.equal(grid.xs, grid.ys)

    def test_linear_boundary_lands_at_known_offset(self):
        # The unit gradient of this model is uniform, so a probe at gradient
        # offset a scores 0.5 + a/4 - 0.545: the class flips past a = 0.18,
        # between grid columns 25 (0.16875) and 26 (0.1875). The orthogonal
        # direction has zero mean and never moves the score, so every column
        # is constant and no probe leaves the pixel box at extent 0.3.
        model, image = self._linear()
        grid = decision_region_grid(model, image, label=0, radius=16, extent=0.3)
        assert (grid.labels[:, :26] == 0).all()
        assert (grid.labels[:, 26:] == 1).all()

    def test_columns_follow_gradient_axis_only(self):
        model, image = self._linear()
        grid = decision_region_grid(model, image, label=0, radius=8, extent=0.3, seed=9)
        for ix in range(17):
            column = grid.labels[:, ix]
            assert (column == column[0]).all()

    def test_center_is_clean_prediction(self, trained_cnn, eval_set):
        image, label = eval_set[0][3], int(eval_set[1][3])
        grid = decision_region_grid(trained_cnn, image, label, radius=4, extent=0.2)
        assert grid.center_label == int(trained_cnn.predict(image.unsqueeze(0))[0])

    def test_grid_is_deterministic(self, trained_cnn, eval_set):
        image, label = eval_set[0][5], int(eval_set[1][5])
        a = decision_region_grid(trained_cnn, image, label, radius=3, extent=0.2, seed=2)
        b = decision_region_grid(trained_cnn, image, label, radius=3, extent=0.2, seed=2)
        assert torch.equal(a.labels, b.labels)
        assert torch.equal(a.r_direction, b.r_direction)

    def test_zero_gradient_anchor_rejected(self):
        model = LinearToyModel(torch.zeros(16), b=0.1, input_shape=(1, 4, 4))
        with pytest.raises(ValueError):
            decision_region_grid(model, torch.full((1, 4, 4), 0.5), label=0, radius=2)

    def test_batched_image_rejected(self, trained_cnn):
        with pytest.raises(ValueError):
            decision_region_grid(trained_cnn, torch.rand(1, 1, 16, 16), label=0)


class TestGridOutputs:
    def _grid(self):
        labels = torch.tensor([[0, 0, 1], [0, 1, 1], [-1, 1, 1]])
        offs = torch.linspace(-0.1, 0.1, 3)
        return RegionGrid(
            labels=labels,
            xs=offs,
            ys=offs.clone(),
            g_direction=torch.ones(1, 2, 2) / 2.0,
            r_direction=torch.ones(1, 2, 2) / 2.0,
            center_label=1,
            image_id="img3",
            model_id="cnn",
        )

    def test_save_grid_csv_and_json(self, tmp_path):
        grid = self._grid()
        save_grid(grid, tmp_path / "grid")
        with (tmp_path / "grid.csv").open() as fh:
            rows = [[int(v) for v in row] for row in csv.reader(fh)]
        assert rows == grid.labels.tolist()
        meta = json.loads((tmp_path / "grid.json").read_text())
        assert meta["radius"] == 1 and meta["center_label"] == 1
        assert meta["image_id"] == "img3" and meta["model_id"] == "cnn"
        assert len(meta["g_direction"]) == 4

    def test_render_bytes_are_deterministic(self, tmp_path):
        grid = self._grid()
        render_region_grid(grid, tmp_path / "a.png")
        render_region_grid(grid, tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_flagged_cells_render_black(self, tmp_path):
        from PIL import Image

        render_region_grid(self._grid(), tmp_path / "g.png", cell=2)
        img = Image.open(tmp_path / "g.png")
        assert img.getpixel((0, 5)) == (0, 0, 0)  # bottom-left cell holds the -1 flag

    def test_uniform_grid_renders_single_color(self, tmp_path):
        from PIL import Image

        grid = self._grid()
        uniform = RegionGrid(
            labels=torch.zeros(3, 3, dtype=torch.int64),
            xs=grid.xs,
            ys=grid.ys,
            g_direction=grid.g_direction,
            r_direction=grid.r_direction,
            center_label=0,
        )
        render_region_grid(uniform, tmp_path / "u.png", cell=3)
        img = Image.open(tmp_path / "u.png")
        colors = img.getcolors()
        assert len(colors) == 1 and colors[0][0] == 81

    def test_montage_width_accounts_for_gap(self, tmp_path):
        from PIL import Image

        grid = self._grid()
        render_region_grid([grid, grid], tmp_path / "m.png", cell=4, gap=5)
        img = Image.open(tmp_path / "m.png")
        assert img.size == (3 * 4 * 2 + 5, 3 * 4)

    def test_empty_montage_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            render_region_grid([], tmp_path / "x.png")
