"""Deterministic synthetic bridge scenes with pixel-perfect ground truth.

Scenes are layered axis-aligned rectangles plus thin polyline strokes:
background, a slab band, beams, columns, optional rails and sleepers. Dark
cracks and rebar-colored blobs are drawn strictly inside column pixels;
crack-like dark distractor strokes are drawn strictly outside them, giving a
controllable source of false positives for unguided damage detectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import (
    COMPONENT_COLUMN,
    COMPONENT_TASK,
    DAMAGE_TASK,
    Image,
    LabelMap,
    write_image_png,
    write_label_png,
)

COMPONENT_PALETTE: dict[int, tuple[int, int, int]] = {
    0: (70, 130, 180),   # non-bridge
    1: (205, 205, 200),  # slab
    2: (155, 155, 160),  # beam
    3: (120, 120, 118),  # column
    4: (80, 170, 90),    # non-structural
    5: (235, 100, 40),   # rail
    6: (120, 75, 35),    # sleeper
}

DAMAGE_PALETTE: dict[int, tuple[int, int, int]] = {
    0: (0, 0, 0),
    1: (255, 60, 60),
    2: (255, 220, 40),
}

CRACK_COLOR = (25, 22, 20)
REBAR_COLOR = (185, 80, 35)
DISTRACTOR_COLOR = (40, 40, 58)

CLASS_NON_DAMAGE = 0
CLASS_CONCRETE_DAMAGE = 1
CLASS_EXPOSED_REBAR = 2


@dataclass(frozen=True)
class SceneParams:
    width: int = 128
    height: int = 128
    palette: Mapping[int, tuple[int, int, int]] = field(
        default_factory=lambda: dict(COMPONENT_PALETTE)
    )
    column_count: tuple[int, int] = (2, 3)
    rail_probability: float = 0.5
    sleeper_probability: float = 0.06
    nonstructural_probability: float = 0.7
    crack_density: float = 1.5       # mean cracks per column
    crack_thickness: tuple[int, int] = (1, 2)
    rebar_density: float = 0.6       # mean rebar blobs per column
    distractor_density: float = 3.0  # mean dark strokes per scene
    noise_amplitude: int = 0
    crack_color: tuple[int, int, int] = CRACK_COLOR
    rebar_color: tuple[int, int, int] = REBAR_COLOR
    distractor_color: tuple[int, int, int] = DISTRACTOR_COLOR

    def __post_init__(self) -> None:
        colors = list(self.palette.values())
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be pairwise distinct")
        for p in (self.rail_probability, self.sleeper_probability, self.nonstructural_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if not 0 <= self.noise_amplitude <= 255:
            raise ValueError("noise_amplitude must lie in 0..255")
        if self.width < 64 or self.height < 64:
            raise ValueError("canvas must be at least 64x64 for the layered geometry")
        cmin, cmax = self.column_count
        if cmin < 1 or cmax < cmin:
            raise ValueError("column_count must be an increasing range starting at >= 1")
        if self.width // cmax < 18:
            raise ValueError("canvas too narrow for the requested column count")


def _draw_polyline(mask: np.ndarray, points: list[tuple[int, int]], thickness: int) -> None:
    """Rasterize segments between consecutive points with a square brush."""
    h, w = mask.shape
    half = thickness // 2
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        steps = max(abs(x1 - x0), abs(y1 - y0), 1)
        for i in range(steps + 1):
            x = x0 + round((x1 - x0) * i / steps)
            y = y0 + round((y1 - y0) * i / steps)
            ya, yb = y - half, y - half + thickness
            xa, xb = x - half, x - half + thickness
            mask[max(0, ya) : max(0, min(h, yb)), max(0, xa) : max(0, min(w, xb))] = True


def _column_rects(rng: np.random.Generator, params: SceneParams, y_top: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping (x0, x1, y0, y1) column spans below the beam band."""
    n = int(rng.integers(params.column_count[0], params.column_count[1] + 1))
    slot = params.width // n
    rects = []
    for i in range(n):
        col_w = int(rng.integers(max(6, slot // 5), max(8, slot // 2)))
        margin = slot - col_w
        x0 = i * slot + int(rng.integers(2, max(3, margin - 1)))
        rects.append((x0, min(x0 + col_w, params.width), y_top, params.height))
    return rects


def generate_scene(seed, params: SceneParams | None = None) -> tuple[Image, LabelMap, LabelMap]:
    """Render one scene; returns (image, component truth, damage truth).

    Deterministic per (seed, params): the same pair always yields bitwise
    identical outputs.
    """
    params = params or SceneParams()
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width
    comp = np.zeros((h, w), dtype=np.uint8)

    # horizontal slab band with a beam band below it
    slab_top = int(rng.integers(h // 10, h // 6))
    slab_bottom = slab_top + int(rng.integers(h // 10, h // 6))
    comp[slab_top:slab_bottom, :] = 1
    beam_bottom = slab_bottom + int(rng.integers(h // 16, h // 10))
    comp[slab_bottom:beam_bottom, :] = 2

    # optional non-structural rects in the background region
    if rng.random() < params.nonstructural_probability:
        for _ in range(int(rng.integers(1, 3))):
            bw = int(rng.integers(6, 14))
            bh = int(rng.integers(4, 10))
            bx = int(rng.integers(0, w - bw))
            by = int(rng.integers(beam_bottom + 2, h - bh)) if beam_bottom + 2 < h - bh else beam_bottom
            comp[by : by + bh, bx : bx + bw] = 4

    # columns overwrite anything below the beams
    rects = _column_rects(rng, params, beam_bottom)
    for x0, x1, y0, y1 in rects:
        comp[y0:y1, x0:x1] = COMPONENT_COLUMN

    # rails ride on top of the slab; sleepers are rare
    if rng.random() < params.rail_probability:
        for offset in (2, 5):
            y = max(0, slab_top - offset)
            comp[y : y + 1, :] = 5
    if rng.random() < params.sleeper_probability:
        n_sleepers = int(rng.integers(3, 8))
        for _ in range(n_sleepers):
            sx = int(rng.integers(0, w - 4))
            sy = max(0, slab_top - 7)
            comp[sy : sy + 2, sx : sx + 4] = 6

    # render the image from the palette
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for cls, color in params.palette.items():
        img[comp == cls] = color

    column_mask = comp == COMPONENT_COLUMN
    damage = np.zeros((h, w), dtype=np.uint8)

    # cracks: dark polylines clipped to column pixels
    tmin, tmax = params.crack_thickness
    for x0, x1, y0, y1 in rects:
        for _ in range(int(rng.poisson(params.crack_density))):
            thickness = int(rng.integers(tmin, tmax + 1))
            points = [
                (int(rng.integers(x0, x1)), int(rng.integers(y0, y1)))
                for _ in range(int(rng.integers(2, 5)))
            ]
            stroke = np.zeros((h, w), dtype=bool)
            _draw_polyline(stroke, points, thickness)
            stroke &= column_mask
            img[stroke] = params.crack_color
            damage[stroke] = CLASS_CONCRETE_DAMAGE

    # rebar blobs: small filled rects clipped to column pixels
    for x0, x1, y0, y1 in rects:
        for _ in range(int(rng.poisson(params.rebar_density))):
            bw = int(rng.integers(3, 7))
            bh = int(rng.integers(3, 7))
            bx = int(rng.integers(x0, max(x0 + 1, x1 - bw)))
            by = int(rng.integers(y0, max(y0 + 1, y1 - bh)))
            blob = np.zeros((h, w), dtype=bool)
            blob[by : by + bh, bx : bx + bw] = True
            blob &= column_mask
            img[blob] = params.rebar_color
            damage[blob] = CLASS_EXPOSED_REBAR

    # distractors: crack-like dark strokes strictly outside columns
    for _ in range(int(rng.poisson(params.distractor_density))):
        thickness = int(rng.integers(2, 4))
        points = [
            (int(rng.integers(0, w)), int(rng.integers(0, h)))
            for _ in range(int(rng.integers(2, 4)))
        ]
        stroke = np.zeros((h, w), dtype=bool)
        _draw_polyline(stroke, points, thickness)
        stroke &= ~column_mask
        img[stroke] = params.distractor_color

    if params.noise_amplitude > 0:
        amp = params.noise_amplitude
        delta = rng.integers(-amp, amp + 1, size=img.shape, dtype=np.int16)
        img = np.clip(img.astype(np.int16) + delta, 0, 255).astype(np.uint8)

    return (
        Image(img),
        LabelMap(comp, COMPONENT_TASK),
        LabelMap(damage, DAMAGE_TASK),
    )


def component_color_rules() -> list[dict]:
    """Color rules recovering component truth from clean scenes, as config docs.

    Crack and rebar colors map to the column class (damage textures sit on
    columns); distractor strokes map to the background class.
    """
    rules = [
        {"color": list(color), "tolerance": 0, "class_index": cls}
        for cls, color in COMPONENT_PALETTE.items()
    ]
    rules.append({"color": list(CRACK_COLOR), "tolerance": 0, "class_index": COMPONENT_COLUMN})
    rules.append({"color": list(REBAR_COLOR), "tolerance": 0, "class_index": COMPONENT_COLUMN})
    rules.append({"color": list(DISTRACTOR_COLOR), "tolerance": 0, "class_index": 0})
    return rules


def generate_corpus(
    seed: int,
    count: int,
    params: SceneParams | None = None,
    out_dir: str | Path = "corpus",
    group_size: int = 2,
):
    """Write ``count`` scenes plus an index CSV; consecutive scenes share a group.

    Layout: images/NNNN.png, labels_cmp/NNNN.png, labels_dmg/NNNN.png, index.csv.
    Per-scene seeds derive from (seed, scene index), so regeneration is
    byte-identical and independent of generation order.
    """
    from .pipeline import CorpusEntry, CorpusIndex

    if count < 1:
        raise ValueError("count must be >= 1")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    params = params or SceneParams()
    out = Path(out_dir)
    for sub in ("images", "labels_cmp", "labels_dmg"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        img, comp, dmg = generate_scene((seed, i), params)
        stem = f"{i:04d}.png"
        write_image_png(img, out / "images" / stem)
        write_label_png(comp, out / "labels_cmp" / stem)
        write_label_png(dmg, out / "labels_dmg" / stem)
        entries.append(
            CorpusEntry(
                image_id=f"{i:04d}",
                group_id=f"viaduct{i // group_size:04d}",
                image_path=f"images/{stem}",
                component_gt_path=f"labels_cmp/{stem}",
                damage_gt_path=f"labels_dmg/{stem}",
            )
        )
    index = CorpusIndex(entries=tuple(entries), base_dir=out)
    index.save(out / "index.csv")
    return index


def with_params(params: SceneParams | None = None, **overrides) -> SceneParams:
    """Convenience: copy default params with field overrides."""
    return replace(params or SceneParams(), **overrides)
