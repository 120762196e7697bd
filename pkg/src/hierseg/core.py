"""Core types: class taxonomies, images, label maps, score maps, and resize primitives.

All types are immutable after construction (backing arrays are frozen), so they
are safe to share across threads. All operations are pure functions: identical
inputs produce bitwise-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import DataError

IGNORE_INDEX = 255

COMPONENT_TASK = "component"
DAMAGE_TASK = "damage"


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous read-only array; never mutates the caller's array."""
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        return arr
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClassTaxonomy:
    """Index<->name table for one segmentation task.

    ``keep_classes`` names the class indices of a *parent* taxonomy whose pixels
    may legally carry this taxonomy's non-background classes (the hierarchy rule
    linking the two tasks). ``None`` means no parent constraint.
    """

    task_name: str
    classes: tuple[tuple[int, str], ...]
    ignore_index: int = IGNORE_INDEX
    eval_classes: frozenset[int] = frozenset()
    keep_classes: frozenset[int] | None = None

    def __post_init__(self) -> None:
        indices = [i for i, _ in self.classes]
        if sorted(indices) != list(range(len(indices))):
            raise ValueError("class indices must be unique and contiguous from 0")
        if len(indices) > 255:
            raise ValueError("at most 255 classes are supported (8-bit label maps)")
        if self.ignore_index in indices:
            raise ValueError("ignore_index collides with a class index")
        if not self.eval_classes <= set(indices):
            raise ValueError("eval_classes must be a subset of the class indices")
        if 0 in self.eval_classes:
            raise ValueError("the background class (index 0) cannot be evaluated")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> dict[int, str]:
        return dict(self.classes)

    def name_of(self, index: int) -> str:
        return self.names[index]

    def to_json_dict(self) -> dict:
        return {
            "task_name": self.task_name,
            "classes": [{"index": i, "name": n} for i, n in self.classes],
            "ignore_index": self.ignore_index,
            "eval_classes": sorted(self.eval_classes),
            "keep_set": sorted(self.keep_classes) if self.keep_classes is not None else None,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "ClassTaxonomy":
        keep = doc.get("keep_set")
        return cls(
            task_name=doc["task_name"],
            classes=tuple(sorted((c["index"], c["name"]) for c in doc["classes"])),
            ignore_index=doc.get("ignore_index", IGNORE_INDEX),
            eval_classes=frozenset(doc.get("eval_classes", ())),
            keep_classes=frozenset(keep) if keep is not None else None,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ClassTaxonomy":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


COMPONENT_COLUMN = 3


def component_taxonomy() -> ClassTaxonomy:
    """Structural component classes; index 0 is the non-bridge background."""
    return ClassTaxonomy(
        task_name=COMPONENT_TASK,
        classes=(
            (0, "non-bridge"),
            (1, "slab"),
            (2, "beam"),
            (3, "column"),
            (4, "non-structural"),
            (5, "rail"),
            (6, "sleeper"),
        ),
        eval_classes=frozenset({1, 2, 3, 4, 5, 6}),
    )


def damage_taxonomy() -> ClassTaxonomy:
    """Damage classes; pixels off the parent column class carry no damage."""
    return ClassTaxonomy(
        task_name=DAMAGE_TASK,
        classes=(
            (0, "non-damage"),
            (1, "concrete damage"),
            (2, "exposed rebar"),
        ),
        eval_classes=frozenset({1, 2}),
        keep_classes=frozenset({COMPONENT_COLUMN}),
    )


@dataclass(frozen=True)
class Image:
    """8-bit RGB raster, row-major, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ValueError("Image.pixels must be a (H, W, 3) uint8 array")
        object.__setattr__(self, "pixels", _freeze(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "Image":
        if len(data) != width * height * 3:
            raise DataError(
                f"image data length {len(data)} != width*height*3 = {width * height * 3}"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
        return cls(arr)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class indices for one task, shape (height, width), uint8."""

    values: np.ndarray
    taxonomy_ref: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 2 or arr.dtype != np.uint8:
            raise ValueError("LabelMap.values must be a (H, W) uint8 array")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes, taxonomy_ref: str) -> "LabelMap":
        if len(data) != width * height:
            raise DataError(
                f"label data length {len(data)} != width*height = {width * height}"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
        return cls(arr, taxonomy_ref)


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel per-class scores, shape (height, width, K), float32, all finite."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.scores)
        if arr.ndim != 3 or arr.dtype != np.float32:
            raise ValueError("ScoreMap.scores must be a (H, W, K) float32 array")
        if not np.isfinite(arr).all():
            raise DataError("ScoreMap contains non-finite scores")
        object.__setattr__(self, "scores", _freeze(arr))

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of a label-map scan: ok, or the offending (x, y, value) triples."""

    ok: bool
    violations: tuple[tuple[int, int, int], ...] = field(default=())


def validate_label_map(label_map: LabelMap, taxonomy: ClassTaxonomy) -> ValidationResult:
    """Scan every pixel; values must be a class index or the ignore index."""
    allowed = np.zeros(256, dtype=bool)
    allowed[[i for i, _ in taxonomy.classes]] = True
    allowed[taxonomy.ignore_index] = True
    bad = ~allowed[label_map.values]
    if not bad.any():
        return ValidationResult(ok=True)
    ys, xs = np.nonzero(bad)
    vals = label_map.values[ys, xs]
    violations = tuple(
        (int(x), int(y), int(v)) for x, y, v in zip(xs, ys, vals)
    )
    return ValidationResult(ok=False, violations=violations)


def class_histogram(label_map: LabelMap) -> dict[int, int]:
    """Pixel count per value present in the map (the ignore index included)."""
    counts = np.bincount(label_map.values.ravel(), minlength=256)
    return {int(v): int(c) for v, c in enumerate(counts) if c > 0}


def scaled_size(width: int, height: int, scale: float) -> tuple[int, int]:
    """Target dimensions at a scale ratio: round half up, minimum 1."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    w = max(1, int(np.floor(width * scale + 0.5)))
    h = max(1, int(np.floor(height * scale + 0.5)))
    return w, h


def _axis_coords(dst: int, src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source coordinates for one axis, clamped to the image."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    np.clip(pos, 0.0, float(src - 1), out=pos)
    lo = np.floor(pos).astype(np.intp)
    np.minimum(lo, src - 1, out=lo)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def _resize_bilinear(arr: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resample of a (H, W, C) array in float64; caller quantizes."""
    x0, x1, fx = _axis_coords(target_w, arr.shape[1])
    y0, y1, fy = _axis_coords(target_h, arr.shape[0])
    a = arr.astype(np.float64)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = a[y0][:, x0] * (1.0 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1.0 - fx) + a[y1][:, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def resize_image(img: Image | ScoreMap, target_w: int, target_h: int) -> Image | ScoreMap:
    """Bilinear resize with half-pixel centers; returns the same kind as the input.

    Identity dimensions return the input unchanged, so the result is
    bitwise-reproducible in both directions.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if isinstance(img, Image):
        if (target_w, target_h) == (img.width, img.height):
            return img
        out = _resize_bilinear(img.pixels, target_w, target_h)
        return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
    if isinstance(img, ScoreMap):
        if (target_w, target_h) == (img.width, img.height):
            return img
        out = _resize_bilinear(img.scores, target_w, target_h)
        return ScoreMap(out.astype(np.float32))
    raise TypeError(f"cannot resize {type(img).__name__}")


def resize_labels(label_map: LabelMap, target_w: int, target_h: int) -> LabelMap:
    """Nearest-neighbor resize; never invents class values."""
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (target_w, target_h) == (label_map.width, label_map.height):
        return label_map
    src_h, src_w = label_map.values.shape
    xi = np.minimum(
        ((np.arange(target_w, dtype=np.float64) + 0.5) * (src_w / target_w)).astype(np.intp),
        src_w - 1,
    )
    yi = np.minimum(
        ((np.arange(target_h, dtype=np.float64) + 0.5) * (src_h / target_h)).astype(np.intp),
        src_h - 1,
    )
    return LabelMap(label_map.values[yi][:, xi], label_map.taxonomy_ref)


def read_image_png(path: str | Path) -> Image:
    with PILImage.open(path) as im:
        return Image(np.asarray(im.convert("RGB"), dtype=np.uint8))


def write_image_png(img: Image, path: str | Path) -> None:
    PILImage.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def read_label_png(path: str | Path, taxonomy_ref: str) -> LabelMap:
    with PILImage.open(path) as im:
        if im.mode != "L":
            raise DataError(f"label map {path} must be single-channel 8-bit, got mode {im.mode}")
        return LabelMap(np.asarray(im, dtype=np.uint8), taxonomy_ref)


def write_label_png(label_map: LabelMap, path: str | Path) -> None:
    PILImage.fromarray(label_map.values, mode="L").save(path, format="PNG")


def write_score_dump(scores: ScoreMap, path: str | Path) -> None:
    """Raw little-endian float32 dump plus a JSON sidecar describing the shape."""
    path = Path(path)
    path.write_bytes(scores.scores.astype("<f4").tobytes())
    sidecar = {"width": scores.width, "height": scores.height, "classes": scores.num_classes}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True))


def read_score_dump(path: str | Path) -> ScoreMap:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    w, h, k = sidecar["width"], sidecar["height"], sidecar["classes"]
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != w * h * k:
        raise DataError(f"score dump {path} has {raw.size} values, expected {w * h * k}")
    return ScoreMap(raw.reshape(h, w, k).astype(np.float32))
