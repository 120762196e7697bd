"""Two-stage hierarchical semantic segmentation toolkit for bridge damage detection."""

from .core import (
    ClassTaxonomy,
    Image,
    LabelMap,
    ScoreMap,
    class_histogram,
    component_taxonomy,
    damage_taxonomy,
    resize_image,
    resize_labels,
    validate_label_map,
)
from .masking import MaskSpec, apply_semantic_mask, mask_labels
from .metrics import ConfusionMatrix, IouReport, accumulate_confusion, iou_from_confusion
from .pipeline import (
    CorpusEntry,
    CorpusIndex,
    Pipeline,
    RunConfig,
    evaluate_corpus,
    run_component_stage,
    run_damage_stage,
    split_by_group,
)
from .sampling import (
    ImageStats,
    RareClassRule,
    SamplingPlan,
    SamplingPolicy,
    build_sampling_plan,
    plan_summary,
)
from .scenegen import SceneParams, generate_corpus, generate_scene
from .tta import ScaleSet, TilePlan, argmax_labels, infer_multiscale, majority_vote, plan_tiles

__version__ = "0.1.0"

__all__ = [
    "ClassTaxonomy",
    "ConfusionMatrix",
    "CorpusEntry",
    "CorpusIndex",
    "Image",
    "ImageStats",
    "IouReport",
    "LabelMap",
    "MaskSpec",
    "Pipeline",
    "RareClassRule",
    "RunConfig",
    "SamplingPlan",
    "SamplingPolicy",
    "ScaleSet",
    "SceneParams",
    "ScoreMap",
    "TilePlan",
    "accumulate_confusion",
    "apply_semantic_mask",
    "argmax_labels",
    "build_sampling_plan",
    "class_histogram",
    "component_taxonomy",
    "damage_taxonomy",
    "evaluate_corpus",
    "generate_corpus",
    "generate_scene",
    "infer_multiscale",
    "iou_from_confusion",
    "majority_vote",
    "mask_labels",
    "plan_summary",
    "plan_tiles",
    "resize_image",
    "resize_labels",
    "run_component_stage",
    "run_damage_stage",
    "split_by_group",
    "validate_label_map",
]
