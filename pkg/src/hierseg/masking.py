"""Semantic-guided masking: blank pixels whose component class is outside the keep set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    COMPONENT_COLUMN,
    COMPONENT_TASK,
    IGNORE_INDEX,
    Image,
    LabelMap,
    resize_labels,
)


@dataclass(frozen=True)
class MaskSpec:
    """Which parent classes keep their pixels, and the fill for everything else."""

    parent_task: str = COMPONENT_TASK
    keep_classes: frozenset[int] = frozenset({COMPONENT_COLUMN})
    fill_color: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        if not self.keep_classes:
            raise ValueError("keep_classes must be non-empty")
        if len(self.fill_color) != 3 or not all(0 <= v <= 255 for v in self.fill_color):
            raise ValueError("fill_color must be an RGB triple in 0..255")

    def to_json_dict(self) -> dict:
        return {
            "parent_task": self.parent_task,
            "keep_classes": sorted(self.keep_classes),
            "fill_color": list(self.fill_color),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MaskSpec":
        return cls(
            parent_task=doc.get("parent_task", COMPONENT_TASK),
            keep_classes=frozenset(doc.get("keep_classes", (COMPONENT_COLUMN,))),
            fill_color=tuple(doc.get("fill_color", (0, 0, 0))),
        )


def align_components(components: LabelMap, width: int, height: int) -> LabelMap:
    """Nearest-neighbor resize of a component map to the target raster, if needed."""
    if (components.width, components.height) == (width, height):
        return components
    return resize_labels(components, width, height)


def keep_mask(components: LabelMap, spec: MaskSpec) -> np.ndarray:
    """Boolean (H, W) array: True where the component class is in the keep set."""
    return np.isin(components.values, sorted(spec.keep_classes))


def apply_semantic_mask(img: Image, components: LabelMap, spec: MaskSpec) -> Image:
    """Keep pixels on kept component classes; fill the rest with ``fill_color``."""
    comp = align_components(components, img.width, img.height)
    keep = keep_mask(comp, spec)
    out = np.empty_like(img.pixels)
    out[:] = np.asarray(spec.fill_color, dtype=np.uint8)
    out[keep] = img.pixels[keep]
    return Image(out)


def mask_labels(
    labels: LabelMap,
    components: LabelMap,
    spec: MaskSpec,
    ignore_index: int = IGNORE_INDEX,
) -> LabelMap:
    """Keep labels on kept component classes; set the rest to the ignore index."""
    comp = align_components(components, labels.width, labels.height)
    keep = keep_mask(comp, spec)
    out = np.full_like(labels.values, ignore_index)
    out[keep] = labels.values[keep]
    return LabelMap(out, labels.taxonomy_ref)
