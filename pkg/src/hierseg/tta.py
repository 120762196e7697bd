"""Sliding-window tiling, multi-scale test-time fusion, decoding, and voting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import SegmenterBackend
from .core import ClassTaxonomy, Image, LabelMap, ScoreMap, resize_image, scaled_size
from .errors import BackendError


@dataclass(frozen=True)
class ScaleSet:
    """Ordered positive resize ratios applied at test time."""

    scales: tuple[float, ...] = (0.75, 1.0, 1.25)

    def __post_init__(self) -> None:
        if not self.scales:
            raise ValueError("scale set must be non-empty")
        if any(s <= 0 for s in self.scales):
            raise ValueError("scales must be positive")


@dataclass(frozen=True)
class TilePlan:
    """Crop-window offsets covering an image; all tiles lie fully inside it."""

    width: int
    height: int
    crop: int
    stride: int
    tiles: tuple[tuple[int, int], ...]

    @property
    def tile_width(self) -> int:
        return min(self.crop, self.width)

    @property
    def tile_height(self) -> int:
        return min(self.crop, self.height)


def _axis_offsets(size: int, crop: int, stride: int) -> list[int]:
    if size <= crop:
        return [0]
    offsets = []
    pos = 0
    while True:
        if pos + crop >= size:
            final = size - crop
            if not offsets or offsets[-1] != final:
                offsets.append(final)
            return offsets
        offsets.append(pos)
        pos += stride


def plan_tiles(width: int, height: int, crop: int, stride: int) -> TilePlan:
    """Row-major offsets {0, stride, ...} with the final one clamped in-bounds."""
    if crop < 1:
        raise ValueError("crop must be >= 1")
    if stride < 1 or stride > crop:
        raise ValueError("stride must satisfy 1 <= stride <= crop")
    xs = _axis_offsets(width, crop, stride)
    ys = _axis_offsets(height, crop, stride)
    tiles = tuple((x, y) for y in ys for x in xs)
    return TilePlan(width=width, height=height, crop=crop, stride=stride, tiles=tiles)


def infer_multiscale(
    img: Image,
    backend: SegmenterBackend,
    scales: ScaleSet | Sequence[float],
    crop: int,
    stride: int,
) -> ScoreMap:
    """Tile-infer the image at each scale, blend overlaps by per-pixel averaging,
    resize each scale's map back to the input resolution, and sum across scales.

    Accumulation follows a fixed canonical order (tiles row-major, scales as
    listed), so two runs with identical inputs are bitwise identical.
    """
    scale_list = scales.scales if isinstance(scales, ScaleSet) else tuple(scales)
    if not scale_list:
        raise ValueError("at least one scale is required")
    k = backend.num_classes
    total: np.ndarray | None = None
    for scale in scale_list:
        sw, sh = scaled_size(img.width, img.height, scale)
        scaled = resize_image(img, sw, sh)
        plan = plan_tiles(sw, sh, crop, stride)
        tw, th = plan.tile_width, plan.tile_height
        score_sum = np.zeros((sh, sw, k), dtype=np.float32)
        cover = np.zeros((sh, sw, 1), dtype=np.float32)
        for x, y in plan.tiles:
            tile = Image(scaled.pixels[y : y + th, x : x + tw])
            try:
                tile_scores = backend.infer(tile)
            except BackendError as e:
                raise type(e)(
                    f"backend {backend.name!r} failed at scale {scale} tile ({x}, {y}): {e}"
                ) from e
            if (tile_scores.width, tile_scores.height) != (tile.width, tile.height):
                raise BackendError(
                    f"backend {backend.name!r} returned {tile_scores.width}x"
                    f"{tile_scores.height} for a {tile.width}x{tile.height} tile"
                )
            if tile_scores.num_classes != k:
                raise BackendError(
                    f"backend {backend.name!r} returned {tile_scores.num_classes} "
                    f"classes, expected {k}"
                )
            score_sum[y : y + th, x : x + tw] += tile_scores.scores
            cover[y : y + th, x : x + tw] += 1.0
        blended = ScoreMap(score_sum / cover)
        at_full = resize_image(blended, img.width, img.height)
        total = at_full.scores if total is None else total + at_full.scores
    return ScoreMap(total)


def argmax_labels(scores: ScoreMap, taxonomy: ClassTaxonomy) -> LabelMap:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    if scores.num_classes != taxonomy.num_classes:
        raise ValueError(
            f"score map has {scores.num_classes} classes, taxonomy "
            f"'{taxonomy.task_name}' has {taxonomy.num_classes}"
        )
    return LabelMap(
        scores.scores.argmax(axis=2).astype(np.uint8), taxonomy.task_name
    )


def majority_vote(preds: Sequence[LabelMap]) -> LabelMap:
    """Per-pixel modal class across models; ties resolve to the lowest value."""
    if not preds:
        raise ValueError("majority_vote needs at least one prediction")
    first = preds[0]
    for p in preds[1:]:
        if (p.width, p.height) != (first.width, first.height):
            raise ValueError("predictions differ in dimensions")
        if p.taxonomy_ref != first.taxonomy_ref:
            raise ValueError("predictions differ in taxonomy")
    if len(preds) == 1:
        return first
    stack = np.stack([p.values for p in preds])
    values = np.unique(stack)
    counts = np.stack([(stack == v).sum(axis=0) for v in values])
    winner = counts.argmax(axis=0)  # first maximum -> lowest class value wins ties
    return LabelMap(values[winner].astype(np.uint8), first.taxonomy_ref)
