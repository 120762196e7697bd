"""Importance sampling: a deterministic resampled index over-representing rare classes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import ClassTaxonomy, LabelMap, class_histogram


@dataclass(frozen=True)
class RareClassRule:
    """Repeat an image ``repeats`` times when it has more than ``min_pixels`` of the class."""

    class_index: int
    min_pixels: int
    repeats: int

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.min_pixels < 0:
            raise ValueError("min_pixels must be >= 0")

    def qualifies(self, histogram: Mapping[int, int]) -> bool:
        # strict inequality: the pixel count must exceed the threshold
        return histogram.get(self.class_index, 0) > self.min_pixels


@dataclass(frozen=True)
class SamplingPolicy:
    rules: tuple[RareClassRule, ...] = ()

    def validate_for(self, taxonomy: ClassTaxonomy) -> None:
        valid = {i for i, _ in taxonomy.classes}
        for rule in self.rules:
            if rule.class_index not in valid:
                raise ValueError(
                    f"sampling rule references class {rule.class_index}, "
                    f"unknown in taxonomy '{taxonomy.task_name}'"
                )

    def to_json_dict(self) -> dict:
        return {
            "rules": [
                {"class_index": r.class_index, "min_pixels": r.min_pixels, "repeats": r.repeats}
                for r in self.rules
            ]
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "SamplingPolicy":
        return cls(
            rules=tuple(
                RareClassRule(r["class_index"], r["min_pixels"], r["repeats"])
                for r in doc.get("rules", ())
            )
        )


@dataclass(frozen=True)
class ImageStats:
    """Per-image class pixel counts, keyed by image id."""

    image_id: str
    histogram: Mapping[int, int]

    @classmethod
    def from_label_map(cls, image_id: str, label_map: LabelMap) -> "ImageStats":
        return cls(image_id=image_id, histogram=class_histogram(label_map))


@dataclass(frozen=True)
class SamplingPlan:
    """Ordered multiset of image ids; copies of one image are adjacent."""

    entries: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{e}\n" for e in self.entries))

    @classmethod
    def load(cls, path: str | Path) -> "SamplingPlan":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln]
        return cls(entries=tuple(lines))


def image_multiplicity(stats: ImageStats, policy: SamplingPolicy) -> int:
    """Max repeat count over qualifying rules; 1 when no rule qualifies."""
    return max(
        (rule.repeats for rule in policy.rules if rule.qualifies(stats.histogram)),
        default=1,
    )


def build_sampling_plan(stats: Sequence[ImageStats], policy: SamplingPolicy) -> SamplingPlan:
    """Expand the corpus index deterministically, in input order."""
    if not stats:
        raise ValueError("stats must be non-empty")
    entries: list[str] = []
    for s in stats:
        entries.extend([s.image_id] * image_multiplicity(s, policy))
    return SamplingPlan(entries=tuple(entries))


@dataclass(frozen=True)
class ClassSampleShare:
    """How one rare class is represented before and after plan expansion."""

    class_index: int
    qualifying_images: int
    corpus_images: int
    qualifying_entries: int
    plan_entries: int

    @property
    def fraction_before(self) -> float:
        return self.qualifying_images / self.corpus_images

    @property
    def fraction_after(self) -> float:
        return self.qualifying_entries / self.plan_entries


def plan_summary(
    plan: SamplingPlan, stats: Sequence[ImageStats], policy: SamplingPolicy
) -> dict[int, ClassSampleShare]:
    """Per rare class: fraction of images (raw) and plan entries (resampled) qualifying."""
    by_id = {s.image_id: s for s in stats}
    shares: dict[int, ClassSampleShare] = {}
    for rule in policy.rules:
        qualifying_images = sum(1 for s in stats if rule.qualifies(s.histogram))
        qualifying_entries = sum(1 for e in plan.entries if rule.qualifies(by_id[e].histogram))
        shares[rule.class_index] = ClassSampleShare(
            class_index=rule.class_index,
            qualifying_images=qualifying_images,
            corpus_images=len(stats),
            qualifying_entries=qualifying_entries,
            plan_entries=len(plan.entries),
        )
    return shares
