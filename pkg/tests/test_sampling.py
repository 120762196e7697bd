import numpy as np
import pytest

from hierseg.core import LabelMap, component_taxonomy
from hierseg.sampling import (
    ImageStats,
    RareClassRule,
    SamplingPlan,
    SamplingPolicy,
    build_sampling_plan,
    image_multiplicity,
    plan_summary,
)

SLEEPER = 6
POLICY = SamplingPolicy(rules=(RareClassRule(SLEEPER, min_pixels=50, repeats=10),))


def stats(image_id, **hist):
    return ImageStats(image_id=image_id, histogram={int(k): v for k, v in hist.items()})


class TestRules:
    def test_repeats_must_be_positive(self):
        with pytest.raises(ValueError):
            RareClassRule(1, 0, 0)

    def test_strict_threshold(self):
        rule = RareClassRule(SLEEPER, min_pixels=50, repeats=10)
        assert not rule.qualifies({SLEEPER: 50})  # equality does not qualify
        assert rule.qualifies({SLEEPER: 51})

    def test_validate_against_taxonomy(self):
        bad = SamplingPolicy(rules=(RareClassRule(99, 0, 2),))
        with pytest.raises(ValueError):
            bad.validate_for(component_taxonomy())


class TestMultiplicity:
    def test_no_rare_class(self):
        assert image_multiplicity(stats("a", **{"6": 0}), POLICY) == 1

    def test_qualifying_image_repeats(self):
        assert image_multiplicity(stats("a", **{"6": 100}), POLICY) == 10

    def test_two_rules_take_max_not_product(self):
        policy = SamplingPolicy(
            rules=(RareClassRule(5, 10, 10), RareClassRule(6, 10, 4))
        )
        s = stats("a", **{"5": 50, "6": 50})
        assert image_multiplicity(s, policy) == 10


class TestBuildPlan:
    def test_empty_stats_rejected(self):
        with pytest.raises(ValueError):
            build_sampling_plan([], POLICY)

    def test_copies_adjacent_in_input_order(self):
        plan = build_sampling_plan(
            [stats("a", **{"6": 0}), stats("b", **{"6": 99}), stats("c", **{"6": 0})],
            SamplingPolicy(rules=(RareClassRule(SLEEPER, 50, 3),)),
        )
        assert plan.entries == ("a", "b", "b", "b", "c")

    def test_no_image_dropped(self):
        rng = np.random.default_rng(0)
        all_stats = [
            stats(f"i{n}", **{"6": int(rng.integers(0, 120))}) for n in range(40)
        ]
        plan = build_sampling_plan(all_stats, POLICY)
        assert set(plan.entries) == {s.image_id for s in all_stats}
        assert len(plan) == sum(image_multiplicity(s, POLICY) for s in all_stats)

    def test_deterministic(self):
        all_stats = [stats(f"i{n}", **{"6": n * 3}) for n in range(30)]
        a = build_sampling_plan(all_stats, POLICY)
        b = build_sampling_plan(all_stats, POLICY)
        assert a == b

    def test_monotone_in_repeats(self):
        all_stats = [stats(f"i{n}", **{"6": (n % 3) * 60}) for n in range(30)]
        fractions = []
        for repeats in (1, 2, 5, 10):
            policy = SamplingPolicy(rules=(RareClassRule(SLEEPER, 50, repeats),))
            plan = build_sampling_plan(all_stats, policy)
            share = plan_summary(plan, all_stats, policy)[SLEEPER]
            fractions.append(share.fraction_after)
        assert fractions == sorted(fractions)

    def test_from_label_map_histogram(self):
        vals = np.zeros((10, 10), dtype=np.uint8)
        vals[:2, :] = SLEEPER
        s = ImageStats.from_label_map("x", LabelMap(vals, "component"))
        assert s.histogram[SLEEPER] == 20


class TestPlanSummary:
    def test_paper_scale_fractions(self):
        # 100 images, 6 qualifying, repeats 10 -> 154 entries, 60 qualifying
        all_stats = [
            stats(f"i{n:03d}", **{"6": 100 if n < 6 else 0}) for n in range(100)
        ]
        plan = build_sampling_plan(all_stats, POLICY)
        assert len(plan) == 154
        share = plan_summary(plan, all_stats, POLICY)[SLEEPER]
        assert share.qualifying_images == 6
        assert share.qualifying_entries == 60
        assert share.fraction_before == 6 / 100
        assert share.fraction_after == 60 / 154

    def test_identity_policy_keeps_fractions(self):
        all_stats = [stats(f"i{n}", **{"6": 100 if n % 4 == 0 else 0}) for n in range(20)]
        policy = SamplingPolicy(rules=(RareClassRule(SLEEPER, 50, 1),))
        plan = build_sampling_plan(all_stats, policy)
        share = plan_summary(plan, all_stats, policy)[SLEEPER]
        assert share.fraction_after == share.fraction_before

    def test_all_qualify_fraction_one(self):
        all_stats = [stats(f"i{n}", **{"6": 100}) for n in range(10)]
        plan = build_sampling_plan(all_stats, POLICY)
        share = plan_summary(plan, all_stats, POLICY)[SLEEPER]
        assert share.fraction_before == 1.0
        assert share.fraction_after == 1.0


class TestSerialization:
    def test_text_roundtrip(self, tmp_path):
        plan = SamplingPlan(entries=("a", "b", "b", "c"))
        path = tmp_path / "plan.txt"
        plan.save(path)
        assert path.read_text() == "a\nb\nb\nc\n"
        assert SamplingPlan.load(path) == plan
