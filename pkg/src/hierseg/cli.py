"""Command-line surface: corpus generation, splitting, sampling plans, masking,
inference, evaluation, and report emission.

Exit codes: 0 success, 2 config error, 3 data error, 4 backend/protocol error.
Set HIERSEG_LOG to a level name (DEBUG, INFO, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import scenegen
from .core import (
    ClassTaxonomy,
    Image,
    LabelMap,
    read_image_png,
    read_label_png,
    write_image_png,
    write_label_png,
    write_score_dump,
)
from .errors import ConfigError, DataError, HiersegError
from .masking import MaskSpec, apply_semantic_mask
from .metrics import iou_csv_header, iou_csv_values
from .pipeline import (
    VARIANT_LABELS,
    VARIANTS,
    CorpusIndex,
    EvalReport,
    Pipeline,
    RunConfig,
    SamplingPolicy,
    SplitConfig,
    StageConfig,
    report_json_bytes,
    split_by_group,
    variant_config,
)
from .sampling import ImageStats, build_sampling_plan, plan_summary
from .tta import infer_multiscale

log = logging.getLogger("hierseg")


def default_config_dict() -> dict:
    """Documented defaults: palette backend for components, dark-texture
    detector for damage, scales 0.75/1.0/1.25 at crop 64 stride 48."""
    return {
        "component": {
            "backends": [
                {"name": "palette", "kind": "color_rule", "params": {
                    "rules": scenegen.component_color_rules(),
                    "default_class": 0,
                }}
            ],
            "scales": [0.75, 1.0, 1.25],
            "crop": 64,
            "stride": 48,
            "sampling": {"rules": [{"class_index": 6, "min_pixels": 20, "repeats": 10}]},
        },
        "damage": {
            "backends": [
                {"name": "dark", "kind": "darkness", "params": {
                    "luma_threshold": 60,
                    "rebar_color": list(scenegen.REBAR_COLOR),
                    "rebar_tolerance": 12,
                }}
            ],
            "scales": [0.75, 1.0, 1.25],
            "crop": 64,
            "stride": 48,
            "sampling": {"rules": [{"class_index": 2, "min_pixels": 10, "repeats": 10}]},
        },
        "mask": {"parent_task": "component", "keep_classes": [3], "fill_color": [0, 0, 0]},
        "hierarchy_enforce": True,
        "use_gt_components": False,
        "split": {"ratio": 0.9, "seed": 0},
        "ablation": {
            "use_importance_sampling": True,
            "use_multiscale": True,
            "use_sgm": True,
        },
    }


_STAGE_KEYS = {"backends", "scales", "crop", "stride", "sampling"}
_TOP_KEYS = {
    "component",
    "damage",
    "mask",
    "hierarchy_enforce",
    "use_gt_components",
    "split",
    "ablation",
}


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{where}{key}'")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(doc: dict, assignment: str) -> None:
    """Apply one ``dotted.path=json_value`` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are allowed
    node = doc
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def build_run_config(doc: dict) -> RunConfig:
    """Validate a merged config document and construct the typed RunConfig."""
    _check_keys(doc, _TOP_KEYS, "")

    def stage(name: str) -> StageConfig:
        sdoc = doc.get(name, {})
        _check_keys(sdoc, _STAGE_KEYS, f"{name}.")
        return StageConfig(
            backends=tuple(sdoc.get("backends", ())),
            scales=tuple(sdoc.get("scales", (0.75, 1.0, 1.25))),
            crop=int(sdoc.get("crop", 64)),
            stride=int(sdoc.get("stride", 48)),
            sampling=SamplingPolicy.from_json_dict(sdoc.get("sampling", {})),
        )

    ablation_doc = doc.get("ablation", {})
    _check_keys(
        ablation_doc, {"use_importance_sampling", "use_multiscale", "use_sgm"}, "ablation."
    )
    split_doc = doc.get("split", {})
    _check_keys(split_doc, {"ratio", "seed"}, "split.")
    mask_doc = doc.get("mask", {})
    _check_keys(mask_doc, {"parent_task", "keep_classes", "fill_color"}, "mask.")

    from .pipeline import AblationConfig

    try:
        return RunConfig(
            component=stage("component"),
            damage=stage("damage"),
            mask=MaskSpec.from_json_dict(mask_doc),
            hierarchy_enforce=bool(doc.get("hierarchy_enforce", True)),
            use_gt_components=bool(doc.get("use_gt_components", False)),
            split=SplitConfig(
                ratio=float(split_doc.get("ratio", 0.9)), seed=int(split_doc.get("seed", 0))
            ),
            ablation=AblationConfig(
                use_importance_sampling=bool(ablation_doc.get("use_importance_sampling", True)),
                use_multiscale=bool(ablation_doc.get("use_multiscale", True)),
                use_sgm=bool(ablation_doc.get("use_sgm", True)),
            ),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(config_path: str | None, overrides: Sequence[str]) -> tuple[dict, RunConfig]:
    doc = default_config_dict()
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            user_doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        doc = _merge(doc, user_doc)
    for assignment in overrides:
        _apply_override(doc, assignment)
    return doc, build_run_config(doc)


def _load_index(path: str) -> CorpusIndex:
    p = Path(path)
    if p.is_dir():
        p = p / "index.csv"
    if not p.is_file():
        raise DataError(f"corpus index not found: {p}")
    return CorpusIndex.load(p)


def _blend_overlay(img: Image, pred: LabelMap, palette: dict[int, tuple[int, int, int]]) -> Image:
    """50% blend of the image with the per-class palette tint, round half up."""
    tint = np.zeros((*pred.values.shape, 3), dtype=np.int32)
    for cls, color in palette.items():
        tint[pred.values == cls] = color
    blended = (img.pixels.astype(np.int32) + tint + 1) // 2
    return Image(blended.astype(np.uint8))


def emit_report(
    runs: list[tuple[str, EvalReport]],
    cfg: RunConfig,
    out_dir: Path,
    index: CorpusIndex | None = None,
) -> None:
    """Write report.json, per-task IoU CSVs, and overlay PNGs when predictions
    were kept."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "runs": [
            {"variant": variant, "label": VARIANT_LABELS.get(variant, variant), **report.to_json_dict(cfg)}
            for variant, report in runs
        ]
    }
    (out_dir / "report.json").write_bytes(report_json_bytes(doc))

    for task_name, tax in (("component", cfg.component_taxonomy), ("damage", cfg.damage_taxonomy)):
        rows = []
        for variant, report in runs:
            rep = report.component if task_name == "component" else report.damage
            rows.append([VARIANT_LABELS.get(variant, variant)] + iou_csv_values(rep, tax))
        lines = [",".join(["variant"] + iou_csv_header(tax))]
        lines += [",".join(row) for row in rows]
        (out_dir / f"{task_name}_iou.csv").write_text("\n".join(lines) + "\n")

    if index is not None:
        by_id = {e.image_id: e for e in index.entries}
        palettes = {"component": dict(scenegen.COMPONENT_PALETTE), "damage": dict(scenegen.DAMAGE_PALETTE)}
        for variant, report in runs:
            if not report.predictions:
                continue
            for image_id, (comp_pred, dmg_pred) in report.predictions.items():
                img = read_image_png(index.resolve(by_id[image_id].image_path))
                for stage_name, pred in (("component", comp_pred), ("damage", dmg_pred)):
                    dest = out_dir / "overlays" / variant / stage_name
                    dest.mkdir(parents=True, exist_ok=True)
                    write_image_png(
                        _blend_overlay(img, pred, palettes[stage_name]), dest / f"{image_id}.png"
                    )


def cmd_gen(args) -> int:
    params = scenegen.with_params(
        width=args.width,
        height=args.height,
        sleeper_probability=args.sleeper_prob,
        crack_density=args.crack_density,
        distractor_density=args.distractor_density,
        noise_amplitude=args.noise,
    )
    index = scenegen.generate_corpus(
        args.seed, args.count, params, out_dir=args.out, group_size=args.group_size
    )
    print(f"wrote {len(index)} scenes to {args.out}")
    return 0


def cmd_split(args) -> int:
    index = _load_index(args.index)
    result = split_by_group(index, args.ratio, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_ids.txt").write_text("".join(f"{i}\n" for i in result.train_ids))
    (out / "val_ids.txt").write_text("".join(f"{i}\n" for i in result.val_ids))
    print(
        f"split {len(result.train_groups)}/{len(result.val_groups)} groups -> "
        f"{len(result.train_ids)} train / {len(result.val_ids)} val images"
    )
    return 0


def _task_pieces(cfg: RunConfig, task: str):
    if task == "component":
        return cfg.component_taxonomy, cfg.component.sampling, "component_gt_path"
    if task == "damage":
        return cfg.damage_taxonomy, cfg.damage.sampling, "damage_gt_path"
    raise ConfigError(f"unknown task {task!r}")


def cmd_sample_plan(args) -> int:
    _, cfg = load_config(args.config, args.set or [])
    index = _load_index(args.index)
    taxonomy, policy, gt_attr = _task_pieces(cfg, args.task)
    if not policy.rules:
        raise ConfigError(f"no sampling rules configured for task {args.task!r}")
    split = split_by_group(index, cfg.split.ratio, cfg.split.seed)
    train_set = set(split.train_ids)
    stats = []
    for entry in index.entries:
        if entry.image_id not in train_set:
            continue
        gt_path = getattr(entry, gt_attr)
        if not gt_path:
            log.warning("entry %s has no %s ground truth; skipped", entry.image_id, args.task)
            continue
        labels = read_label_png(index.resolve(gt_path), taxonomy.task_name)
        stats.append(ImageStats.from_label_map(entry.image_id, labels))
    if not stats:
        raise DataError("no training images with ground truth; cannot build a plan")
    plan = build_sampling_plan(stats, policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan.save(out / f"plan_{args.task}.txt")
    shares = plan_summary(plan, stats, policy)
    summary = {
        str(c): {
            "qualifying_images": s.qualifying_images,
            "corpus_images": s.corpus_images,
            "fraction_before": s.fraction_before,
            "qualifying_entries": s.qualifying_entries,
            "plan_entries": s.plan_entries,
            "fraction_after": s.fraction_after,
        }
        for c, s in shares.items()
    }
    (out / f"plan_{args.task}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"plan for task {args.task}: {len(stats)} images -> {len(plan)} entries")
    return 0


def cmd_mask(args) -> int:
    _, cfg = load_config(args.config, args.set or [])
    images_dir = Path(args.images)
    comps_dir = Path(args.components)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for img_path in sorted(images_dir.glob("*.png")):
        comp_path = comps_dir / img_path.name
        if not comp_path.is_file():
            raise DataError(f"no component map for {img_path.name} in {comps_dir}")
        img = read_image_png(img_path)
        comp = read_label_png(comp_path, cfg.component_taxonomy.task_name)
        write_image_png(apply_semantic_mask(img, comp, cfg.mask), out / img_path.name)
        count += 1
    if count == 0:
        raise DataError(f"no PNG images found in {images_dir}")
    print(f"masked {count} images into {out}")
    return 0


def cmd_infer(args) -> int:
    _, cfg = load_config(args.config, args.set or [])
    index = _load_index(args.index)
    out = Path(args.out)
    with Pipeline(cfg) as pipe:
        for entry in index.entries:
            img = read_image_png(index.resolve(entry.image_path))
            comp_pred = pipe.run_component_stage(img)
            if args.stage in ("component", "both"):
                dest = out / "predictions_cmp"
                dest.mkdir(parents=True, exist_ok=True)
                write_label_png(comp_pred, dest / f"{entry.image_id}.png")
                if args.dump_scores:
                    stage = cfg.component
                    scores = infer_multiscale(
                        img,
                        pipe.component_backends[0],
                        stage.scales if cfg.ablation.use_multiscale else (1.0,),
                        stage.crop,
                        stage.stride,
                    )
                    dest = out / "scores_cmp"
                    dest.mkdir(parents=True, exist_ok=True)
                    write_score_dump(scores, dest / f"{entry.image_id}.f32")
            if args.stage in ("damage", "both"):
                dmg_pred = pipe.run_damage_stage(img, comp_pred)
                dest = out / "predictions_dmg"
                dest.mkdir(parents=True, exist_ok=True)
                write_label_png(dmg_pred, dest / f"{entry.image_id}.png")
    print(f"inference over {len(index)} images written to {out}")
    return 0


def cmd_eval(args) -> int:
    _, cfg = load_config(args.config, args.set or [])
    index = _load_index(args.index)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")
    out = Path(args.out)
    runs: list[tuple[str, EvalReport]] = []
    for variant in variants:
        vcfg = variant_config(cfg, variant)
        with Pipeline(vcfg) as pipe:
            report = pipe.evaluate_corpus(
                index, jobs=args.jobs, keep_predictions=args.overlays
            )
        runs.append((variant, report))
        if vcfg.ablation.use_importance_sampling:
            _export_plans(vcfg, index, out / "plans" / variant)
        comp_mean = report.component.mean_iou
        dmg_mean = report.damage.mean_iou
        print(f"{VARIANT_LABELS[variant]}: component mean IoU {comp_mean:.4f}, damage mean IoU {dmg_mean:.4f}")
    emit_report(runs, cfg, out, index=index if args.overlays else None)
    print(f"reports written to {out}")
    return 0


def _export_plans(cfg: RunConfig, index: CorpusIndex, out: Path) -> None:
    """Write the training-index expansion for each stage that has rules."""
    split = split_by_group(index, cfg.split.ratio, cfg.split.seed)
    train_set = set(split.train_ids)
    for task, taxonomy, policy, gt_attr in (
        ("component", cfg.component_taxonomy, cfg.component.sampling, "component_gt_path"),
        ("damage", cfg.damage_taxonomy, cfg.damage.sampling, "damage_gt_path"),
    ):
        if not policy.rules:
            continue
        stats = []
        for entry in index.entries:
            gt_path = getattr(entry, gt_attr)
            if entry.image_id in train_set and gt_path:
                labels = read_label_png(index.resolve(gt_path), taxonomy.task_name)
                stats.append(ImageStats.from_label_map(entry.image_id, labels))
        if stats:
            out.mkdir(parents=True, exist_ok=True)
            build_sampling_plan(stats, policy).save(out / f"plan_{task}.txt")


def cmd_report(args) -> int:
    report_path = Path(args.out) / "report.json"
    if not report_path.is_file():
        raise DataError(f"no report.json under {args.out}; run eval first")
    doc = json.loads(report_path.read_text())
    _, cfg = load_config(args.config, args.set or [])
    for task_name, tax in (("component", cfg.component_taxonomy), ("damage", cfg.damage_taxonomy)):
        lines = [",".join(["variant"] + iou_csv_header(tax))]
        for run in doc.get("runs", ()):
            rep = run[task_name]
            cells = [run.get("label", run.get("variant", "run"))]
            for c in sorted(tax.eval_classes):
                v = rep["per_class"].get(str(c))
                cells.append(f"{v:.6f}" if v is not None else "")
            mean = rep.get("mean_iou")
            cells.append(f"{mean:.6f}" if mean is not None and not _is_nan(mean) else "")
            lines.append(",".join(cells))
        (Path(args.out) / f"{task_name}_iou.csv").write_text("\n".join(lines) + "\n")
    print(f"CSV reports regenerated under {args.out}")
    return 0


def _is_nan(v) -> bool:
    return isinstance(v, float) and v != v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierseg",
        description="Two-stage hierarchical segmentation pipeline for bridge damage detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument(
                "--set", action="append", metavar="KEY=VALUE",
                help="config override, dotted path = JSON value",
            )
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--group-size", type=int, default=2)
    p.add_argument("--sleeper-prob", type=float, default=0.06)
    p.add_argument("--crack-density", type=float, default=1.5)
    p.add_argument("--distractor-density", type=float, default=3.0)
    p.add_argument("--noise", type=int, default=0)
    add_common(p, config=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", help="grouped train/validation split")
    p.add_argument("--index", required=True, help="corpus index.csv or its directory")
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    add_common(p, config=False)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("sample-plan", help="build the resampled training index")
    p.add_argument("--index", required=True)
    p.add_argument("--task", choices=("component", "damage"), required=True)
    add_common(p)
    p.set_defaults(func=cmd_sample_plan)

    p = sub.add_parser("mask", help="mask images by their component maps")
    p.add_argument("--images", required=True, help="directory of RGB PNGs")
    p.add_argument("--components", required=True, help="directory of component-map PNGs")
    add_common(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("infer", help="run stages over a corpus, write predictions")
    p.add_argument("--index", required=True)
    p.add_argument("--stage", choices=("component", "damage", "both"), default="both")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump-scores", action="store_true", help="also dump fused score maps")
    add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate ablation variants over a corpus")
    p.add_argument("--index", required=True)
    p.add_argument("--variants", default="ens,is,is+ms,is+ms+sgm")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--overlays", action="store_true", help="emit per-image overlay PNGs")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="regenerate CSV reports from report.json")
    add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("HIERSEG_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HiersegError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
