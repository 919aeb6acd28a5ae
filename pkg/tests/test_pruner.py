"""Score-based, class-balanced and random pruning"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import ValidationError
from src.models.records import Direction, Metric, PruneManifest, PrunePolicy
from src.pruning.pruner import (
    class_counts, overlap, prune_balanced, prune_by_score, prune_random, random_keys, removal_count,
)

from .conftest import make_scores


def test_removal_count():
    assert removal_count(10, fraction=0.25) == 2
    assert removal_count(8, fraction=0.0) == 0
    assert removal_count(7, count=7) == 7
    for bad in (dict(fraction=1.0), dict(fraction=-0.1), dict(count=11), dict(), dict(fraction=0.5, count=2)):
        with pytest.raises(ValidationError):
            removal_count(10, **bad)


def test_keep_high_removes_lowest(two_class_scores):
    manifest = prune_by_score(two_class_scores, fraction=0.25)
    assert manifest.removed == ["a1", "b2"]
    assert manifest.kept == ["a0", "a2", "a3", "b0", "b1", "b3"]
    assert manifest.policy.metric == "DU"


def test_keep_low_removes_highest(two_class_scores):
    manifest = prune_by_score(two_class_scores, fraction=0.25, direction=Direction.KEEP_LOW)
    assert manifest.removed == ["a0", "b1"]


def test_ties_break_by_id():
    scores = make_scores({"c": 0.2, "a": 0.2, "b": 0.2, "d": 0.5})
    assert prune_by_score(scores, count=2).removed == ["a", "b"]
    assert prune_by_score(scores, count=1, direction=Direction.KEEP_LOW).removed == ["d"]
    assert prune_by_score(scores, count=2, direction=Direction.KEEP_LOW).removed == ["a", "d"]


def test_zero_fraction_keeps_everything(two_class_scores):
    manifest = prune_by_score(two_class_scores, fraction=0.0)
    assert manifest.removed == []
    assert len(manifest.kept) == 8


def test_empty_table_is_rejected():
    with pytest.raises(ValidationError):
        prune_by_score(make_scores({}), fraction=0.5)


def test_balanced_prunes_inside_each_class(two_class_scores, two_class_labels):
    manifest = prune_balanced(two_class_scores, two_class_labels, fraction=0.5)
    assert manifest.removed == ["a1", "a2", "b0", "b2"]
    assert manifest.policy.balanced
    assert class_counts(manifest, two_class_labels) == {0: (2, 2), 1: (2, 2)}


def test_balanced_leftover_goes_to_lower_class():
    # q = 1.5 and 2.5: one leftover, equal remainders, class 0 wins
    ids = ["a0", "a1", "a2", "b0", "b1", "b2", "b3", "b4"]
    scores = make_scores({i: 0.1 * n for n, i in enumerate(ids)})
    labels = {i: 0 if i.startswith("a") else 1 for i in ids}
    counts = class_counts(prune_balanced(scores, labels, fraction=0.5), labels)
    assert counts == {0: (1, 2), 1: (3, 2)}


def test_balanced_leftover_follows_largest_remainder():
    ids = [f"a{i}" for i in range(3)] + [f"b{i}" for i in range(7)]
    scores = make_scores({i: 0.05 for i in ids})
    labels = {i: 0 if i.startswith("a") else 1 for i in ids}
    # total 3, q = 0.9 and 2.1
    counts = class_counts(prune_balanced(scores, labels, fraction=0.3), labels)
    assert counts[0][1] == 1 and counts[1][1] == 2


def test_balanced_count_mode(two_class_scores, two_class_labels):
    manifest = prune_balanced(two_class_scores, two_class_labels, count=3)
    assert len(manifest.removed) == 3
    assert class_counts(manifest, two_class_labels) == {0: (2, 2), 1: (3, 1)}


def test_balanced_needs_every_label(two_class_scores):
    with pytest.raises(ValidationError, match="have no label"):
        prune_balanced(two_class_scores, {"a0": 0}, fraction=0.5)


@st.composite
def labeled_scores(draw):
    n = draw(st.integers(min_value=1, max_value=60))
    classes = draw(st.integers(min_value=1, max_value=5))
    values = draw(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=n, max_size=n))
    label_list = draw(st.lists(st.integers(min_value=0, max_value=classes - 1), min_size=n, max_size=n))
    ids = [f"x{i:03d}" for i in range(n)]
    return make_scores(dict(zip(ids, values))), dict(zip(ids, label_list))


fractions = st.floats(min_value=0.0, max_value=0.99, exclude_max=False)


@settings(max_examples=200, deadline=None)
@given(data=labeled_scores(), fraction=fractions)
def test_removal_count_property(data, fraction):
    scores, labels = data
    expected = math.floor(fraction * len(scores))
    plain = prune_by_score(scores, fraction=fraction)
    balanced = prune_balanced(scores, labels, fraction=fraction)
    assert len(plain.removed) == expected
    assert len(balanced.removed) == expected
    assert sorted(plain.kept + plain.removed) == scores.ids


@settings(max_examples=200, deadline=None)
@given(data=labeled_scores(), fraction=fractions)
def test_balanced_quotas_track_class_shares(data, fraction):
    scores, labels = data
    manifest = prune_balanced(scores, labels, fraction=fraction)
    for c, (kept, removed) in class_counts(manifest, labels).items():
        assert abs(removed - fraction * (kept + removed)) <= 1.0 + 1e-9


@settings(max_examples=200, deadline=None)
@given(data=labeled_scores(), low=fractions, high=fractions)
def test_kept_sets_are_nested(data, low, high):
    scores, _ = data
    low, high = sorted((low, high))
    for direction in Direction:
        larger = set(prune_by_score(scores, fraction=low, direction=direction).kept)
        smaller = set(prune_by_score(scores, fraction=high, direction=direction).kept)
        assert smaller <= larger


def test_random_keys_are_reproducible():
    assert random_keys(5, 7).tolist() == random_keys(5, 7).tolist()
    assert random_keys(0, 7).tolist() == []
    assert random_keys(3, 7).tolist() == random_keys(5, 7)[:3].tolist()


def test_random_pruning_is_deterministic_per_seed():
    ids = [f"r{i:03d}" for i in range(100)]
    first = prune_random(ids, fraction=0.5, seed=11)
    assert first == prune_random(ids, fraction=0.5, seed=11)
    assert first.removed != prune_random(ids, fraction=0.5, seed=12).removed
    assert len(first.removed) == 50
    assert first.policy.random and first.policy.seed == 11


def test_random_pruning_ignores_input_order():
    ids = [f"r{i:03d}" for i in range(40)]
    assert prune_random(ids, fraction=0.3, seed=5) == prune_random(list(reversed(ids)), fraction=0.3, seed=5)


def test_random_balanced(two_class_labels):
    ids = sorted(two_class_labels)
    manifest = prune_random(ids, fraction=0.5, seed=3, labels=two_class_labels, balanced=True)
    assert class_counts(manifest, two_class_labels) == {0: (2, 2), 1: (2, 2)}
    with pytest.raises(ValidationError, match="needs labels"):
        prune_random(ids, fraction=0.5, balanced=True)


def test_random_rejects_duplicate_ids():
    with pytest.raises(ValidationError, match="duplicate"):
        prune_random(["a", "a", "b"], fraction=0.5)


def manifest(kept, removed):
    return PruneManifest(kept=kept, removed=removed, policy=PrunePolicy(fraction=0.5))


def test_overlap_values():
    a = manifest(["c", "d"], ["a", "b"])
    assert overlap(a, a) == 1.0
    assert overlap(a, manifest(["a", "b"], ["c", "d"])) == 0.0
    assert overlap(a, manifest(["b", "d"], ["a", "c"])) == 0.5
    assert overlap(manifest(["a"], []), manifest(["a"], [])) == 1.0


def test_overlap_errors():
    a = manifest(["c", "d"], ["a", "b"])
    with pytest.raises(ValidationError, match="cover different ids"):
        overlap(a, manifest(["c", "e"], ["a", "b"]))
    with pytest.raises(ValidationError, match="differ in size"):
        overlap(a, manifest(["b", "c", "d"], ["a"]))


def test_overlap_of_score_and_random_pruning(two_class_scores):
    by_score = prune_by_score(two_class_scores, fraction=0.5)
    by_chance = prune_random(two_class_scores.ids, fraction=0.5, seed=0)
    assert 0.0 <= overlap(by_score, by_chance) <= 1.0
    assert overlap(by_score, by_chance) == overlap(by_chance, by_score)


def test_manifest_rejects_ids_in_both_lists():
    with pytest.raises(ValueError, match="both kept and removed"):
        manifest(["a", "b"], ["b"])


def test_policy_metric_for_fp_tables():
    scores = make_scores({"a": 0.1, "b": 0.2}, metric=Metric.FP)
    assert prune_by_score(scores, count=1).policy.metric == "FP"
