"""Decision-region grids: model labels over a 2D slice of input space."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from PIL import Image

from .attacks.core import clip_pixels
from .models.base import DifferentiableClassifier, loss_gradient

# Fixed label palette so renders are comparable across runs and models.
PALETTE = [
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
]


def orthogonal_direction(g: torch.Tensor, seed: int = 0, normalize: bool = True) -> torch.Tensor:
    """Seeded random direction with the component along g removed.

    The result is unit norm (unless normalize=False keeps the raw residual)
    and satisfies |<g, r>| <= 1e-6. A zero gradient has no orthogonal
    complement and raises.
    """
    flat = g.flatten()
    gnorm = flat.norm()
    if gnorm == 0:
        raise ValueError("zero gradient: orthogonal direction undefined")
    unit_g = flat / gnorm
    gen = torch.Generator().manual_seed(seed)
    for _ in range(8):  # retry degenerate draws that collapse onto g
        draw = torch.randn(flat.shape, generator=gen, dtype=torch.float64)
        draw = draw.to(g.dtype)
        resid = draw - (draw @ unit_g) * unit_g
        # one re-projection pass cleans up float round-off
        resid = resid - (resid @ unit_g) * unit_g
        if resid.norm() > 1e-6:
            r = resid / resid.norm() if normalize else resid
            return r.view_as(g)
    raise ValueError("could not draw a direction independent of g")


@dataclass
class RegionGrid:
    """Label matrix over the (gradient, orthogonal) plane around an anchor image.

    labels[iy, ix] is the model's class at I + xs[ix] * g + ys[iy] * r,
    clipped to the pixel box. The center cell is the clean prediction.
    """

    labels: torch.Tensor
    xs: torch.Tensor
    ys: torch.Tensor
    g_direction: torch.Tensor
    r_direction: torch.Tensor
    center_label: int
    image_id: str = ""
    model_id: str = ""

    @property
    def radius(self) -> int:
        return (self.labels.shape[0] - 1) // 2


def decision_region_grid(
    model: DifferentiableClassifier,
    image: torch.Tensor,
    label: int,
    radius: int = 16,
    extent: float = 0.5,
    seed: int = 0,
    normalize_g: bool = True,
    normalize_r: bool = True,
    image_id: str = "",
    model_id: str = "",
) -> RegionGrid:
    """Sweep the plane spanned by the loss gradient and a random orthogonal
    direction, recording the model's label at each lattice point.

    The grid is (2*radius+1) squared with offsets spanning [-extent, extent]
    on both axes. Every probe is clipped to [0, 1] before evaluation.
    """
    if image.dim() != 3:
        raise ValueError("expected a single (C, H, W) image")
    x = image.unsqueeze(0)
    y = torch.tensor([label], dtype=torch.int64)
    g = loss_gradient(model, x, y)[0]
    gnorm = g.flatten().norm()
    if gnorm == 0:
        raise ValueError("zero gradient at the anchor image")
    if normalize_g:
        g = g / gnorm
    r = orthogonal_direction(g, seed=seed, normalize=normalize_r)

    side = 2 * radius + 1
    offsets = torch.linspace(-extent, extent, side)
    gx = offsets.view(1, side, 1, 1, 1) * g  # columns: gradient axis
    ry = offsets.view(side, 1, 1, 1, 1) * r  # rows: orthogonal axis
    probes = clip_pixels(image.unsqueeze(0).unsqueeze(0) + gx + ry)
    flat = probes.reshape(side * side, *image.shape)
    with torch.no_grad():
        labels = model.predict(flat).reshape(side, side)

    return RegionGrid(
        labels=labels,
        xs=offsets.clone(),
        ys=offsets.clone(),
        g_direction=g,
        r_direction=r,
        center_label=int(labels[radius, radius]),
        image_id=image_id,
        model_id=model_id,
    )


def save_grid(grid: RegionGrid, stem: str | Path) -> None:
    """CSV label matrix plus JSON metadata under ``<stem>.csv`` / ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    with stem.with_suffix(".csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid.labels.tolist():
            writer.writerow(row)
    meta = {
        "version": 1,
        "radius": grid.radius,
        "xs": [float(v) for v in grid.xs.tolist()],
        "ys": [float(v) for v in grid.ys.tolist()],
        "center_label": grid.center_label,
        "image_id": grid.image_id,
        "model_id": grid.model_id,
        "g_direction": [float(v) for v in grid.g_direction.flatten().tolist()],
        "r_direction": [float(v) for v in grid.r_direction.flatten().tolist()],
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def render_region_grid(
    grids: RegionGrid | list[RegionGrid],
    path: str | Path,
    cell: int = 8,
    gap: int = 4,
) -> None:
    """Color-mapped PNG; a list renders as a side-by-side montage.

    Label -> color is the fixed palette (the -1 adversarial flag renders
    black), so two identical grids produce identical bytes.
    """
    if isinstance(grids, RegionGrid):
        grids = [grids]
    if not grids:
        raise ValueError("nothing to render")
    sides = [g.labels.shape[0] for g in grids]
    height = max(sides) * cell
    width = sum(s * cell for s in sides) + gap * (len(grids) - 1)
    img = Image.new("RGB", (width, height), (255, 255, 255))
    px = img.load()
    x0 = 0
    for grid, side in zip(grids, sides):
        labels = grid.labels.tolist()
        for iy in range(side):
            for ix in range(side):
                lab = labels[iy][ix]
                color = (0, 0, 0) if lab < 0 else PALETTE[lab % len(PALETTE)]
                for dy in range(cell):
                    for dx in range(cell):
                        px[x0 + ix * cell + dx, iy * cell + dy] = color
        x0 += side * cell + gap
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
