"""Two-stage orchestration: grouped splitting, component stage, damage stage
with hierarchy enforcement, and corpus evaluation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import backends as backends_mod
from .core import (
    ClassTaxonomy,
    Image,
    LabelMap,
    component_taxonomy,
    damage_taxonomy,
    read_image_png,
    read_label_png,
)
from .errors import ConfigError, DataError
from .masking import MaskSpec, align_components, apply_semantic_mask, keep_mask
from .metrics import (
    ConfusionMatrix,
    IouReport,
    accumulate_confusion,
    iou_from_confusion,
)
from .sampling import SamplingPolicy
from .tta import ScaleSet, argmax_labels, infer_multiscale, majority_vote

log = logging.getLogger("hierseg")

CLASS_NON_DAMAGE = 0


@dataclass(frozen=True)
class StageConfig:
    """Backends plus test-time augmentation settings for one stage."""

    backends: tuple[dict, ...]
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)
    crop: int = 64
    stride: int = 48
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)

    def __post_init__(self) -> None:
        ScaleSet(tuple(self.scales))  # validates
        if self.crop < 1 or not 1 <= self.stride <= self.crop:
            raise ConfigError("crop must be >= 1 and 1 <= stride <= crop")


@dataclass(frozen=True)
class SplitConfig:
    ratio: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError("split ratio must lie strictly between 0 and 1")


@dataclass(frozen=True)
class AblationConfig:
    use_importance_sampling: bool = True
    use_multiscale: bool = True
    use_sgm: bool = True


@dataclass(frozen=True)
class RunConfig:
    component: StageConfig
    damage: StageConfig
    mask: MaskSpec = field(default_factory=MaskSpec)
    hierarchy_enforce: bool = True
    # evaluation normally feeds *predicted* component maps into the damage
    # stage; flip this to use ground-truth maps where available instead
    use_gt_components: bool = False
    split: SplitConfig = field(default_factory=SplitConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    component_taxonomy: ClassTaxonomy = field(default_factory=component_taxonomy)
    damage_taxonomy: ClassTaxonomy = field(default_factory=damage_taxonomy)

    def __post_init__(self) -> None:
        if not self.component.backends:
            raise ConfigError("component stage needs at least one backend")
        if not self.damage.backends:
            raise ConfigError("damage stage needs at least one backend")
        valid_parent = {i for i, _ in self.component_taxonomy.classes}
        if not set(self.mask.keep_classes) <= valid_parent:
            raise ConfigError("mask keep_classes reference unknown component classes")
        self.component.sampling.validate_for(self.component_taxonomy)
        self.damage.sampling.validate_for(self.damage_taxonomy)

    def to_json_dict(self) -> dict:
        def stage(s: StageConfig) -> dict:
            return {
                "backends": [dict(b) for b in s.backends],
                "scales": list(s.scales),
                "crop": s.crop,
                "stride": s.stride,
                "sampling": s.sampling.to_json_dict(),
            }

        return {
            "component": stage(self.component),
            "damage": stage(self.damage),
            "mask": self.mask.to_json_dict(),
            "hierarchy_enforce": self.hierarchy_enforce,
            "use_gt_components": self.use_gt_components,
            "split": {"ratio": self.split.ratio, "seed": self.split.seed},
            "ablation": {
                "use_importance_sampling": self.ablation.use_importance_sampling,
                "use_multiscale": self.ablation.use_multiscale,
                "use_sgm": self.ablation.use_sgm,
            },
            "taxonomies": {
                "component": self.component_taxonomy.to_json_dict(),
                "damage": self.damage_taxonomy.to_json_dict(),
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_ablation(self, **switches) -> "RunConfig":
        return replace(self, ablation=replace(self.ablation, **switches))


@dataclass(frozen=True)
class CorpusEntry:
    image_id: str
    group_id: str
    image_path: str
    component_gt_path: str | None = None
    damage_gt_path: str | None = None


@dataclass(frozen=True)
class CorpusIndex:
    """Corpus listing; paths are relative to ``base_dir``."""

    entries: tuple[CorpusEntry, ...]
    base_dir: Path = Path(".")

    def __post_init__(self) -> None:
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("corpus image_ids must be unique")
        for e in self.entries:
            if not e.group_id:
                raise DataError(f"entry {e.image_id} has no group_id")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        return Path(self.base_dir) / rel

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["image_id", "group_id", "image", "component_gt", "damage_gt"])
            for e in self.entries:
                writer.writerow(
                    [
                        e.image_id,
                        e.group_id,
                        e.image_path,
                        e.component_gt_path or "",
                        e.damage_gt_path or "",
                    ]
                )

    @classmethod
    def load(cls, path: str | Path) -> "CorpusIndex":
        path = Path(path)
        entries = []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            required = {"image_id", "group_id", "image"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise DataError(f"index {path} is missing required columns {sorted(required)}")
            for row in reader:
                entries.append(
                    CorpusEntry(
                        image_id=row["image_id"],
                        group_id=row["group_id"],
                        image_path=row["image"],
                        component_gt_path=row.get("component_gt") or None,
                        damage_gt_path=row.get("damage_gt") or None,
                    )
                )
        return cls(entries=tuple(entries), base_dir=path.parent)


@dataclass(frozen=True)
class SplitResult:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    train_groups: tuple[str, ...]
    val_groups: tuple[str, ...]


def split_by_group(index: CorpusIndex, ratio: float, seed: int) -> SplitResult:
    """Shuffle groups with a seeded generator; no group spans both subsets.

    The first ceil(ratio * G) groups train; when G >= 2 at least one group is
    reserved for validation. A single-group corpus goes entirely to train with
    a warning.
    """
    if not index.entries:
        raise DataError("cannot split an empty corpus index")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    groups: list[str] = []
    seen = set()
    for e in index.entries:
        if e.group_id not in seen:
            seen.add(e.group_id)
            groups.append(e.group_id)
    rng = random.Random(seed)
    rng.shuffle(groups)
    n_train = math.ceil(ratio * len(groups))
    if len(groups) >= 2 and n_train >= len(groups):
        n_train = len(groups) - 1
    if len(groups) == 1:
        log.warning("corpus has a single group; validation split is empty")
    train_groups = set(groups[:n_train])
    train_ids = tuple(e.image_id for e in index.entries if e.group_id in train_groups)
    val_ids = tuple(e.image_id for e in index.entries if e.group_id not in train_groups)
    return SplitResult(
        train_ids=train_ids,
        val_ids=val_ids,
        train_groups=tuple(sorted(train_groups)),
        val_groups=tuple(sorted(set(groups) - train_groups)),
    )


@dataclass
class EvalReport:
    component: IouReport
    damage: IouReport
    metadata: dict
    predictions: dict[str, tuple[LabelMap, LabelMap]] | None = None

    def to_json_dict(self, cfg: RunConfig) -> dict:
        return {
            "component": self.component.to_json_dict(cfg.component_taxonomy),
            "damage": self.damage.to_json_dict(cfg.damage_taxonomy),
            "metadata": self.metadata,
        }


def report_json_bytes(doc: Mapping) -> bytes:
    """Canonical report serialization: stable key order, newline-terminated."""
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


class Pipeline:
    """Backends instantiated once per config; stages and evaluation on top."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        k_comp = cfg.component_taxonomy.num_classes
        k_dmg = cfg.damage_taxonomy.num_classes
        self.component_backends = [
            backends_mod.build_backend(spec, cfg.component_taxonomy.task_name, k_comp)
            for spec in cfg.component.backends
        ]
        self.damage_backends = [
            backends_mod.build_backend(spec, cfg.damage_taxonomy.task_name, k_dmg)
            for spec in cfg.damage.backends
        ]

    def close(self) -> None:
        for b in self.component_backends + self.damage_backends:
            b.close()

    def __enter__(self) -> "Pipeline":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _stage_scales(self, stage: StageConfig) -> tuple[float, ...]:
        return tuple(stage.scales) if self.cfg.ablation.use_multiscale else (1.0,)

    def run_component_stage(self, img: Image) -> LabelMap:
        """Multi-scale inference per backend, then a per-pixel majority vote."""
        stage = self.cfg.component
        preds = [
            argmax_labels(
                infer_multiscale(img, b, self._stage_scales(stage), stage.crop, stage.stride),
                self.cfg.component_taxonomy,
            )
            for b in self.component_backends
        ]
        return majority_vote(preds)

    def run_damage_stage(self, img: Image, components: LabelMap) -> LabelMap:
        """Masked (when enabled) inference and vote, then the hierarchy veto:
        pixels predicted off the keep set cannot carry damage classes."""
        cfg = self.cfg
        stage = cfg.damage
        comp = align_components(components, img.width, img.height)
        stage_input = apply_semantic_mask(img, comp, cfg.mask) if cfg.ablation.use_sgm else img
        preds = [
            argmax_labels(
                infer_multiscale(stage_input, b, self._stage_scales(stage), stage.crop, stage.stride),
                cfg.damage_taxonomy,
            )
            for b in self.damage_backends
        ]
        voted = majority_vote(preds)
        if cfg.hierarchy_enforce:
            keep = keep_mask(comp, cfg.mask)
            values = voted.values.copy()
            values[~keep] = CLASS_NON_DAMAGE
            voted = LabelMap(values, voted.taxonomy_ref)
        return voted

    def evaluate_corpus(
        self,
        index: CorpusIndex,
        jobs: int = 1,
        keep_predictions: bool = False,
    ) -> EvalReport:
        """Run both stages over the validation split and accumulate global
        confusion matrices. The damage stage consumes predicted component maps.

        Deterministic: per-image results merge in corpus order regardless of
        ``jobs``, so repeated runs serialize byte-identically.
        """
        cfg = self.cfg
        split = split_by_group(index, cfg.split.ratio, cfg.split.seed)
        val_set = set(split.val_ids)
        entries = [e for e in index.entries if e.image_id in val_set]
        if not entries:
            raise DataError("validation split is empty; nothing to evaluate")

        k_comp = cfg.component_taxonomy.num_classes
        k_dmg = cfg.damage_taxonomy.num_classes

        def work(entry: CorpusEntry):
            img = read_image_png(index.resolve(entry.image_path))
            comp_pred = self.run_component_stage(img)
            comp_gt = None
            if entry.component_gt_path:
                comp_gt = read_label_png(
                    index.resolve(entry.component_gt_path), cfg.component_taxonomy.task_name
                )
            comp_for_damage = comp_pred
            if cfg.use_gt_components and comp_gt is not None:
                comp_for_damage = comp_gt
            dmg_pred = self.run_damage_stage(img, comp_for_damage)
            comp_cm = None
            dmg_cm = None
            if comp_gt is not None:
                comp_cm = accumulate_confusion(comp_pred, comp_gt, cfg.component_taxonomy)
            if entry.damage_gt_path:
                gt = read_label_png(
                    index.resolve(entry.damage_gt_path), cfg.damage_taxonomy.task_name
                )
                dmg_cm = accumulate_confusion(dmg_pred, gt, cfg.damage_taxonomy)
            return comp_cm, dmg_cm, (comp_pred, dmg_pred)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(work, entries))
        else:
            results = [work(e) for e in entries]

        comp_total = ConfusionMatrix.zeros(k_comp)
        dmg_total = ConfusionMatrix.zeros(k_dmg)
        skipped_comp = 0
        skipped_dmg = 0
        predictions: dict[str, tuple[LabelMap, LabelMap]] = {}
        for entry, (comp_cm, dmg_cm, preds) in zip(entries, results):
            if comp_cm is None:
                skipped_comp += 1
                log.warning("entry %s has no component ground truth; skipped", entry.image_id)
            else:
                comp_total = comp_total.merged(comp_cm)
            if dmg_cm is None:
                skipped_dmg += 1
                log.warning("entry %s has no damage ground truth; skipped", entry.image_id)
            else:
                dmg_total = dmg_total.merged(dmg_cm)
            if keep_predictions:
                predictions[entry.image_id] = preds

        metadata = {
            "config": cfg.to_json_dict(),
            "config_sha256": cfg.config_hash(),
            "split": {
                "ratio": cfg.split.ratio,
                "seed": cfg.split.seed,
                "train_groups": list(split.train_groups),
                "val_groups": list(split.val_groups),
            },
            "num_val_images": len(entries),
            "skipped": {"component_gt": skipped_comp, "damage_gt": skipped_dmg},
            "switches": {
                "use_importance_sampling": cfg.ablation.use_importance_sampling,
                "use_multiscale": cfg.ablation.use_multiscale,
                "use_sgm": cfg.ablation.use_sgm,
                "hierarchy_enforce": cfg.hierarchy_enforce,
            },
        }
        return EvalReport(
            component=iou_from_confusion(comp_total, cfg.component_taxonomy),
            damage=iou_from_confusion(dmg_total, cfg.damage_taxonomy),
            metadata=metadata,
            predictions=predictions if keep_predictions else None,
        )


def run_component_stage(img: Image, cfg: RunConfig) -> LabelMap:
    with Pipeline(cfg) as p:
        return p.run_component_stage(img)


def run_damage_stage(img: Image, components: LabelMap, cfg: RunConfig) -> LabelMap:
    with Pipeline(cfg) as p:
        return p.run_damage_stage(img, components)


def evaluate_corpus(
    index: CorpusIndex, cfg: RunConfig, jobs: int = 1, keep_predictions: bool = False
) -> EvalReport:
    with Pipeline(cfg) as p:
        return p.evaluate_corpus(index, jobs=jobs, keep_predictions=keep_predictions)


VARIANTS: dict[str, dict] = {
    "ens": {"use_importance_sampling": False, "use_multiscale": False, "use_sgm": False},
    "is": {"use_importance_sampling": True, "use_multiscale": False, "use_sgm": False},
    "is+ms": {"use_importance_sampling": True, "use_multiscale": True, "use_sgm": False},
    "is+ms+sgm": {"use_importance_sampling": True, "use_multiscale": True, "use_sgm": True},
}

VARIANT_LABELS: dict[str, str] = {
    "ens": "ENS",
    "is": "ENS+I.S.",
    "is+ms": "ENS+I.S.+M.S.",
    "is+ms+sgm": "ENS+I.S.+M.S.+S.G.M.",
}


def variant_config(cfg: RunConfig, variant: str) -> RunConfig:
    """Ablation variant: the hierarchy veto is part of the masking feature, so
    it is active only in variants that enable masking."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    switches = VARIANTS[variant]
    cfg = cfg.with_ablation(**switches)
    return replace(cfg, hierarchy_enforce=cfg.hierarchy_enforce and switches["use_sgm"])
