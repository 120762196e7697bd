"""Acceptance suite: one test per pipeline-level criterion, with stated
tolerances and runtime budgets. Each test prints a PASS line on success
(run with ``pytest -s`` to see them inline)."""

import dataclasses
import json
import time
import zlib
from collections import Counter

import numpy as np
import pytest

from hierseg import scenegen
from hierseg.backends import remote_infer
from hierseg.backends.base import SegmenterBackend
from hierseg.backends.conformance import frame_roundtrip_check
from hierseg.backends.loopback import LoopbackServer, constant_model
from hierseg.cli import build_run_config, default_config_dict, main
from hierseg.core import ClassTaxonomy, Image, LabelMap, ScoreMap
from hierseg.metrics import accumulate_confusion, iou_from_confusion
from hierseg.pipeline import (
    CorpusEntry,
    CorpusIndex,
    Pipeline,
    split_by_group,
    variant_config,
)
from hierseg.sampling import (
    RareClassRule,
    SamplingPolicy,
    ImageStats,
    build_sampling_plan,
    plan_summary,
)
from hierseg.tta import infer_multiscale, majority_vote, plan_tiles

# Reference seed for the ablation corpora; the margins below were verified
# end-to-end on this seed and are properties of the generator's damage and
# distractor load.
REFERENCE_SEED = 1203

TAX8 = ClassTaxonomy(
    "accept8",
    tuple((i, f"c{i}") for i in range(8)),
    eval_classes=frozenset(range(1, 8)),
)


def _pass(name: str) -> None:
    print(f"PASS {name}")


@pytest.fixture(scope="module")
def sgm_corpus(tmp_path_factory):
    """50 scenes with crack-like off-column distractors, thickness-2 cracks."""
    out = tmp_path_factory.mktemp("sgm_corpus")
    params = scenegen.with_params(
        distractor_density=3.0, crack_thickness=(2, 2), crack_density=1.5
    )
    return scenegen.generate_corpus(REFERENCE_SEED, 50, params, out_dir=out, group_size=2)


@pytest.fixture(scope="module")
def thin_crack_corpus(tmp_path_factory):
    """50 scenes of 1-2 px cracks only: the thin-object regime."""
    out = tmp_path_factory.mktemp("thin_corpus")
    params = scenegen.with_params(
        distractor_density=0.0, crack_thickness=(1, 2), crack_density=2.5, rebar_density=0.0
    )
    return scenegen.generate_corpus(REFERENCE_SEED, 50, params, out_dir=out, group_size=2)


class HashScoreBackend(SegmenterBackend):
    def __init__(self, num_classes=5):
        self.name = "hash"
        self.task = "component"
        self.num_classes = num_classes

    def infer(self, img: Image) -> ScoreMap:
        rng = np.random.default_rng(zlib.crc32(img.pixels.tobytes()))
        return ScoreMap(rng.random((img.height, img.width, self.num_classes), dtype=np.float32))


def test_iou_oracle_equivalence():
    """1000 random 16x16 pairs, K=8, random ignore: counts exact, IoU to 1e-12."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    k = 8
    inter = [0] * k
    union = [0] * k
    acc = None
    for _ in range(1000):
        pred = rng.integers(0, k, size=(16, 16), dtype=np.uint8)
        gt = rng.integers(0, k, size=(16, 16), dtype=np.uint8)
        gt[rng.random((16, 16)) < 0.08] = 255
        acc = accumulate_confusion(LabelMap(pred, "a"), LabelMap(gt, "a"), TAX8, acc)
        for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
            if g == 255:
                continue
            if p == g:
                inter[g] += 1
                union[g] += 1
            else:
                union[g] += 1
                union[p] += 1
    diag = acc.counts.diagonal()
    unions = acc.counts.sum(axis=1) + acc.counts.sum(axis=0) - diag
    for c in range(k):
        assert int(diag[c]) == inter[c]
        assert int(unions[c]) == union[c]
    report = iou_from_confusion(acc, TAX8)
    for c in range(k):
        if union[c] == 0:
            assert c not in report.per_class
        else:
            assert abs(report.per_class[c] - inter[c] / union[c]) < 1e-12
    expected_mean = sum(
        inter[c] / union[c] for c in range(1, 8) if union[c] > 0
    ) / sum(1 for c in range(1, 8) if union[c] > 0)
    assert abs(report.mean_iou - expected_mean) < 1e-12
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"took {elapsed:.2f}s, budget 5s"
    _pass(f"iou-oracle-equivalence ({elapsed:.2f}s)")


def test_majority_vote_oracle():
    """1000 random pixels for M in {1,3,5}: exact match with brute-force mode."""
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    for m in (1, 3, 5):
        preds = [
            LabelMap(rng.integers(0, 8, size=(25, 40), dtype=np.uint8), "t")
            for _ in range(m)
        ]
        voted = majority_vote(preds)
        stack = np.stack([p.values for p in preds])
        for y in range(25):
            for x in range(40):
                votes = Counter(stack[:, y, x].tolist())
                top = max(votes.values())
                expected = min(v for v, n in votes.items() if n == top)
                assert voted.values[y, x] == expected
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"took {elapsed:.2f}s, budget 1s"
    _pass(f"majority-vote-oracle ({elapsed:.2f}s)")


def test_tiling_coverage():
    """500 random (w, h, crop, stride): full coverage, every tile in-bounds."""
    rng = np.random.default_rng(103)
    violations = 0
    for _ in range(500):
        w = int(rng.integers(1, 300))
        h = int(rng.integers(1, 300))
        crop = int(rng.integers(1, 128))
        stride = int(rng.integers(1, crop + 1))
        plan = plan_tiles(w, h, crop, stride)
        covered = np.zeros((h, w), dtype=bool)
        tw, th = plan.tile_width, plan.tile_height
        for x, y in plan.tiles:
            if x < 0 or y < 0 or x + tw > w or y + th > h:
                violations += 1
            covered[y : y + th, x : x + tw] = True
        if not covered.all():
            violations += 1
    assert violations == 0
    _pass("tiling-coverage")


def test_fusion_identity():
    """scales=[1.0] with crop >= image: bitwise equal to one direct call."""
    rng = np.random.default_rng(104)
    backend = HashScoreBackend()
    for _ in range(50):
        h = int(rng.integers(2, 48))
        w = int(rng.integers(2, 48))
        img = Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        direct = backend.infer(img)
        crop = max(w, h)
        fused = infer_multiscale(img, backend, [1.0], crop=crop, stride=crop)
        assert fused.scores.tobytes() == direct.scores.tobytes()
    _pass("fusion-identity")


def test_importance_sampling_arithmetic():
    """100 images with 6 qualifying at repeats 10: plan 154 entries, 60/154 share."""
    sleeper = 6
    stats = [
        ImageStats(f"img{i:03d}", {sleeper: 120} if i < 6 else {sleeper: 0})
        for i in range(100)
    ]
    policy = SamplingPolicy(rules=(RareClassRule(sleeper, min_pixels=50, repeats=10),))
    plan = build_sampling_plan(stats, policy)
    assert len(plan) == 154
    share = plan_summary(plan, stats, policy)[sleeper]
    assert share.qualifying_entries == 60
    assert share.plan_entries == 154
    assert share.fraction_after == 60 / 154
    _pass("importance-sampling-arithmetic")


def test_hierarchy_invariant(sgm_corpus):
    """With enforcement on, no off-column pixel carries a damage class."""
    doc = default_config_dict()
    doc["ablation"]["use_multiscale"] = False
    cfg = build_run_config(doc)  # sgm + enforcement on by default
    with Pipeline(cfg) as pipe:
        report = pipe.evaluate_corpus(sgm_corpus, keep_predictions=True)
    violations = 0
    for comp_pred, dmg_pred in report.predictions.values():
        off_keep = comp_pred.values != 3
        violations += int((dmg_pred.values[off_keep] != 0).sum())
    assert violations == 0
    _pass("hierarchy-invariant")


def test_sgm_ablation_direction(sgm_corpus):
    """Masking strictly improves mean damage IoU, margin >= 0.05, under 60 s."""
    start = time.perf_counter()
    doc = default_config_dict()
    doc["ablation"]["use_multiscale"] = False
    cfg = build_run_config(doc)
    means = {}
    for use_sgm in (False, True):
        vcfg = dataclasses.replace(
            cfg,
            ablation=dataclasses.replace(cfg.ablation, use_sgm=use_sgm),
            hierarchy_enforce=use_sgm,
        )
        with Pipeline(vcfg) as pipe:
            means[use_sgm] = pipe.evaluate_corpus(sgm_corpus).damage.mean_iou
    elapsed = time.perf_counter() - start
    assert means[True] > means[False]
    assert means[True] - means[False] >= 0.05
    assert elapsed < 60.0, f"took {elapsed:.2f}s, budget 60s"
    _pass(
        f"sgm-ablation-direction (on {means[True]:.3f} vs off {means[False]:.3f}, "
        f"{elapsed:.1f}s)"
    )


def test_multiscale_ablation_direction(thin_crack_corpus):
    """Thin-object backend at crop 64: multi-scale fusion never loses to single."""
    doc = default_config_dict()
    doc["damage"]["backends"] = [
        {"name": "blockdark", "kind": "block_darkness",
         "params": {"luma_threshold": 60, "rebar_color": [185, 80, 35],
                    "rebar_tolerance": 12, "block_size": 2}}
    ]
    doc["damage"]["crop"] = 64
    doc["damage"]["stride"] = 64
    doc["damage"]["scales"] = [0.75, 1.0, 1.25]
    cfg = build_run_config(doc)
    means = {}
    for variant in ("is", "is+ms"):
        vcfg = variant_config(cfg, variant)
        with Pipeline(vcfg) as pipe:
            means[variant] = pipe.evaluate_corpus(thin_crack_corpus).damage.mean_iou
    assert means["is+ms"] >= means["is"]
    _pass(
        f"multiscale-ablation-direction (multi {means['is+ms']:.3f} vs "
        f"single {means['is']:.3f})"
    )


def test_grouped_split():
    """200 random corpora: train/val groups disjoint; 10 groups at 0.9 -> 9/1."""
    rng = np.random.default_rng(105)
    for trial in range(200):
        n_groups = int(rng.integers(2, 15))
        entries = []
        n = 0
        for g in range(n_groups):
            for _ in range(int(rng.integers(1, 4))):
                entries.append(
                    CorpusEntry(image_id=f"i{n:04d}", group_id=f"g{g}", image_path="x.png")
                )
                n += 1
        index = CorpusIndex(entries=tuple(entries))
        ratio = float(rng.uniform(0.05, 0.95))
        result = split_by_group(index, ratio, seed=trial)
        assert set(result.train_groups) & set(result.val_groups) == set()
    ten = CorpusIndex(
        entries=tuple(
            CorpusEntry(image_id=f"i{g}", group_id=f"g{g}", image_path="x.png")
            for g in range(10)
        )
    )
    result = split_by_group(ten, 0.9, seed=0)
    assert len(result.train_groups) == 9
    assert len(result.val_groups) == 1
    _pass("grouped-split")


def test_determinism_byte_identical_reports(sgm_corpus, tmp_path):
    """eval twice, once with --jobs 4: report.json bytes identical."""
    args = [
        "eval", "--index", str(sgm_corpus.base_dir), "--variants", "is,is+ms+sgm",
    ]
    outs = []
    for label, jobs in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / label
        assert main(args + ["--out", str(out), "--jobs", str(jobs)]) == 0
        outs.append((out / "report.json").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    _pass("determinism-byte-identical-reports")


def test_protocol_self_test():
    """1000-frame round-trip property plus a loopback echo backend exchange."""
    assert frame_roundtrip_check(1000, seed=106) == 1000
    rng = np.random.default_rng(107)
    with LoopbackServer(constant_model(3), task="damage", num_classes=3) as server:
        conn = server.connect()
        for _ in range(20):
            h = int(rng.integers(1, 32))
            w = int(rng.integers(1, 32))
            img = Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
            scores = remote_infer(conn, img)
            assert (scores.width, scores.height, scores.num_classes) == (w, h, 3)
            assert (scores.scores[:, :, 0] == 1.0).all()
            assert (scores.scores[:, :, 1:] == 0.0).all()
        conn.shutdown()
    _pass("protocol-self-test")
