"""Segmenter backend abstraction and the built-in rule-based toy backends.

Built-in backends are pure functions of (image, parameters): identical tiles
produce identical score maps, which keeps the whole pipeline bit-reproducible.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..core import Image, ScoreMap

LUMA_WEIGHTS = (299, 587, 114)  # integer BT.601, scaled by 1000


class SegmenterBackend(ABC):
    """One segmentation model behind a common inference interface.

    ``concurrency`` is "parallel" for reentrant backends and "exclusive" for
    backends that admit one in-flight request (remote connections).
    """

    name: str
    task: str
    num_classes: int
    concurrency: str = "parallel"

    @abstractmethod
    def infer(self, img: Image) -> ScoreMap:
        """Score every pixel of ``img``; shape (H, W, num_classes)."""

    def close(self) -> None:
        """Release any resources; built-in backends have none."""


def one_hot_scores(labels: np.ndarray, num_classes: int) -> ScoreMap:
    """Lift per-pixel class indices to a one-hot score map."""
    h, w = labels.shape
    scores = np.zeros((h, w, num_classes), dtype=np.float32)
    yy, xx = np.indices((h, w))
    scores[yy, xx, labels] = 1.0
    return ScoreMap(scores)


@dataclass(frozen=True)
class ColorRule:
    """Match a pixel within per-channel tolerance of an RGB color."""

    color: tuple[int, int, int]
    tolerance: tuple[int, int, int]
    class_index: int

    def matches(self, pixels: np.ndarray) -> np.ndarray:
        diff = np.abs(pixels.astype(np.int16) - np.asarray(self.color, dtype=np.int16))
        return (diff <= np.asarray(self.tolerance, dtype=np.int16)).all(axis=2)


def _tolerance_triple(tol) -> tuple[int, int, int]:
    if isinstance(tol, (int, np.integer)):
        return (int(tol),) * 3
    t = tuple(int(v) for v in tol)
    if len(t) != 3:
        raise ValueError("tolerance must be a scalar or a triple")
    return t


@dataclass(frozen=True)
class ColorRuleSet:
    """Ordered first-match-wins color rules with a default class."""

    rules: tuple[ColorRule, ...]
    default_class: int = 0


def color_rule_segment(
    img: Image, rules: ColorRuleSet, num_classes: int | None = None
) -> ScoreMap:
    """One-hot scores: first rule whose color matches wins, else the default class."""
    if num_classes is None:
        num_classes = max([rules.default_class] + [r.class_index for r in rules.rules]) + 1
    labels = np.full((img.height, img.width), rules.default_class, dtype=np.intp)
    unclaimed = np.ones((img.height, img.width), dtype=bool)
    for rule in rules.rules:
        hit = unclaimed & rule.matches(img.pixels)
        labels[hit] = rule.class_index
        unclaimed &= ~hit
    return one_hot_scores(labels, num_classes)


def pixel_luma(pixels: np.ndarray) -> np.ndarray:
    """Integer BT.601 luminance: (299*R + 587*G + 114*B) // 1000."""
    p = pixels.astype(np.int32)
    return (LUMA_WEIGHTS[0] * p[..., 0] + LUMA_WEIGHTS[1] * p[..., 1] + LUMA_WEIGHTS[2] * p[..., 2]) // 1000


def darkness_damage_segment(
    img: Image,
    luma_threshold: int,
    rebar_color: tuple[int, int, int],
    rebar_tolerance,
) -> ScoreMap:
    """Toy damage scorer (K=3): dark pixels -> class 1, rebar-colored -> class 2, else 0."""
    dark = pixel_luma(img.pixels) < luma_threshold
    rebar = ColorRule(tuple(rebar_color), _tolerance_triple(rebar_tolerance), 2).matches(img.pixels)
    labels = np.zeros((img.height, img.width), dtype=np.intp)
    labels[rebar] = 2
    labels[dark] = 1  # darkness takes precedence over the rebar rule
    return one_hot_scores(labels, 3)


def block_darkness_segment(
    img: Image,
    luma_threshold: int,
    rebar_color: tuple[int, int, int],
    rebar_tolerance,
    block_size: int = 2,
) -> ScoreMap:
    """Thin-object-sensitive variant: a pixel is damage only when it anchors a
    fully dark ``block_size`` square, so sub-block-thin marks are missed and
    pixels near the tile border (where the window would leave the tile) are
    never detected."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    dark = pixel_luma(img.pixels) < luma_threshold
    h, w = dark.shape
    detected = np.zeros((h, w), dtype=bool)
    if h >= block_size and w >= block_size:
        windows = np.lib.stride_tricks.sliding_window_view(dark, (block_size, block_size))
        detected[: h - block_size + 1, : w - block_size + 1] = windows.all(axis=(2, 3))
    rebar = ColorRule(tuple(rebar_color), _tolerance_triple(rebar_tolerance), 2).matches(img.pixels)
    labels = np.zeros((h, w), dtype=np.intp)
    labels[rebar] = 2
    labels[detected] = 1
    return one_hot_scores(labels, 3)


class ColorRuleBackend(SegmenterBackend):
    """Palette-lookup segmenter, the test oracle for clean synthetic scenes."""

    def __init__(self, name: str, task: str, num_classes: int, rules: ColorRuleSet):
        self.name = name
        self.task = task
        self.num_classes = num_classes
        self.rules = rules

    def infer(self, img: Image) -> ScoreMap:
        return color_rule_segment(img, self.rules, self.num_classes)


class DarknessBackend(SegmenterBackend):
    """Per-pixel dark-texture damage detector."""

    def __init__(
        self,
        name: str,
        luma_threshold: int = 60,
        rebar_color: tuple[int, int, int] = (185, 80, 35),
        rebar_tolerance=12,
        task: str = "damage",
    ):
        self.name = name
        self.task = task
        self.num_classes = 3
        self.luma_threshold = int(luma_threshold)
        self.rebar_color = tuple(int(v) for v in rebar_color)
        self.rebar_tolerance = _tolerance_triple(rebar_tolerance)

    def infer(self, img: Image) -> ScoreMap:
        return darkness_damage_segment(
            img, self.luma_threshold, self.rebar_color, self.rebar_tolerance
        )


class BlockDarknessBackend(SegmenterBackend):
    """Dark-texture detector that needs a solid dark block, so it degrades on
    thin marks and at tile borders."""

    def __init__(
        self,
        name: str,
        luma_threshold: int = 60,
        rebar_color: tuple[int, int, int] = (185, 80, 35),
        rebar_tolerance=12,
        block_size: int = 2,
        task: str = "damage",
    ):
        self.name = name
        self.task = task
        self.num_classes = 3
        self.luma_threshold = int(luma_threshold)
        self.rebar_color = tuple(int(v) for v in rebar_color)
        self.rebar_tolerance = _tolerance_triple(rebar_tolerance)
        self.block_size = int(block_size)

    def infer(self, img: Image) -> ScoreMap:
        return block_darkness_segment(
            img,
            self.luma_threshold,
            self.rebar_color,
            self.rebar_tolerance,
            self.block_size,
        )


class ConstantBackend(SegmenterBackend):
    """Returns a constant one-hot score for a fixed class; test plumbing."""

    def __init__(self, name: str, task: str, num_classes: int, class_index: int = 0, score: float = 1.0):
        self.name = name
        self.task = task
        self.num_classes = num_classes
        self.class_index = class_index
        self.score = float(score)

    def infer(self, img: Image) -> ScoreMap:
        scores = np.zeros((img.height, img.width, self.num_classes), dtype=np.float32)
        scores[:, :, self.class_index] = self.score
        return ScoreMap(scores)
