import itertools
import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latefusion.fusion import FusedScores
from latefusion.metrics import (
    ClassCatalog,
    EvaluationOutcome,
    MetricsError,
    assign_groups,
    balanced_accuracy,
    merge_outcomes,
    topk_hit,
    unbalanced_accuracy,
)

DATA = Path(__file__).parent / "data"


def enumerated_order(values):
    """The unique permutation that is non-increasing with index-ordered ties."""
    for perm in itertools.permutations(range(len(values))):
        if all(
            values[a] > values[b] or (values[a] == values[b] and a < b)
            for a, b in zip(perm, perm[1:])
        ):
            return list(perm)
    raise AssertionError("no valid ordering")


def load_fixture():
    fx = json.loads((DATA / "metrics_fixture.json").read_text())
    catalog = assign_groups(
        ClassCatalog(tuple(fx["class_names"]), tuple(fx["train_counts"])), fx["rare_threshold"]
    )
    values = np.array([s["scores"] for s in fx["samples"]])
    labels = [s["label"] for s in fx["samples"]]
    return fx, catalog, values, labels


def test_fixture_ranks_match_enumeration():
    _, _, values, labels = load_fixture()
    outcome = EvaluationOutcome.from_scores(FusedScores(values, "fixture"), labels)
    expected = [enumerated_order(list(v)).index(lab) + 1 for v, lab in zip(values, labels)]
    assert outcome.ranks.tolist() == expected == [1, 1, 3, 1, 3, 1, 2, 3, 1, 3]


@pytest.mark.parametrize("kind", ["balanced", "unbalanced"])
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("group", ["all", "rare", "common"])
def test_fixture_values_exact(kind, k, group):
    fx, catalog, values, labels = load_fixture()
    outcome = EvaluationOutcome.from_scores(FusedScores(values, "fixture"), labels)
    fn = balanced_accuracy if kind == "balanced" else unbalanced_accuracy
    assert fn(outcome, k, group, catalog) == float(Fraction(fx["expected"][kind][str(k)][group]))


def test_hand_arithmetic_two_classes():
    catalog = ClassCatalog(("a", "b"))
    outcome = EvaluationOutcome(2, labels=[0, 0, 1], ranks=[1, 2, 1])
    assert balanced_accuracy(outcome, 1, "all", catalog) == 0.75
    assert unbalanced_accuracy(outcome, 1, "all", catalog) == pytest.approx(2 / 3)
    perfect = EvaluationOutcome(2, labels=[0, 1, 1], ranks=[1, 1, 1])
    assert balanced_accuracy(perfect, 1, "all", catalog) == 1.0
    assert unbalanced_accuracy(perfect, 1, "all", catalog) == 1.0


def test_unbalanced_three_of_ten():
    outcome = EvaluationOutcome(2, labels=[0] * 10, ranks=[1] * 3 + [2] * 7)
    assert unbalanced_accuracy(outcome, 1, "all", ClassCatalog(("a", "b"))) == 0.3


def test_topk_hit_basics_and_errors():
    f = FusedScores(np.array([0.0, 1.0, 0.0]), "x")
    assert topk_hit(f, 1, 1)
    assert topk_hit(f, 2, 3)
    with pytest.raises(MetricsError):
        topk_hit(f, 1, 4)
    with pytest.raises(MetricsError):
        topk_hit(f, 3, 1)


def test_topk_hit_duplicates_at_boundary():
    # classes 1, 2 and 4 tie at 0.2, straddling k=2
    v = [0.3, 0.2, 0.2, 0.1, 0.2]
    f = FusedScores(np.array(v), "x")
    order = enumerated_order(v)
    for label in range(5):
        for k in range(1, 6):
            assert topk_hit(f, label, k) == (label in order[:k])
    assert topk_hit(f, 1, 2) and not topk_hit(f, 2, 2) and not topk_hit(f, 4, 3)


def test_absent_classes_excluded_from_balanced_mean():
    catalog = ClassCatalog(("a", "b", "c"))
    outcome = EvaluationOutcome(3, labels=[0, 1], ranks=[1, 2])
    assert balanced_accuracy(outcome, 1, "all", catalog) == 0.5


def test_empty_group_errors():
    catalog = ClassCatalog(("a", "b"), (5, 500), ("rare", "common"))
    outcome = EvaluationOutcome(2, labels=[1], ranks=[1])
    with pytest.raises(MetricsError):
        balanced_accuracy(outcome, 1, "rare", catalog)
    with pytest.raises(MetricsError):
        unbalanced_accuracy(outcome, 1, "rare", catalog)
    with pytest.raises(MetricsError):
        balanced_accuracy(outcome, 1, "common", ClassCatalog(("a", "b")))


def test_assign_groups():
    cat = ClassCatalog(("x", "y"), (19, 2797))
    assert assign_groups(cat, 100).groups == ("rare", "common")
    assert assign_groups(cat, 1).groups == ("common", "common")
    assert assign_groups(cat, 5000).groups == ("rare", "rare")
    assert assign_groups(cat, 100, explicit={0: "common", 1: "rare"}).groups == ("common", "rare")
    with pytest.raises(MetricsError):
        assign_groups(ClassCatalog(("x", "y")), 100)
    with pytest.raises(MetricsError):
        assign_groups(cat, 0)


def test_catalog_validation():
    with pytest.raises(MetricsError):
        ClassCatalog(("a", "a"))
    with pytest.raises(MetricsError):
        ClassCatalog(("a", "b"), (1, -1))
    with pytest.raises(MetricsError):
        ClassCatalog(("a", "b"), None, ("rare", "medium"))


@st.composite
def evaluation_sets(draw):
    d = draw(st.integers(2, 12))
    n = draw(st.integers(1, 60))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    values = np.round(rng.random((n, d)), 1)  # plenty of ties
    labels = rng.integers(d, size=n)
    counts = tuple(int(c) for c in rng.integers(0, 200, size=d))
    catalog = assign_groups(ClassCatalog(tuple(f"c{j}" for j in range(d)), counts), 100)
    return EvaluationOutcome.from_scores(FusedScores(values, "r"), labels), catalog


def _groups_with_samples(outcome, catalog):
    totals = outcome.class_totals()
    return [g for g in ("rare", "common", "all") if any(totals[j] for j in catalog.classes_in(g))]


@given(evaluation_sets())
@settings(max_examples=100, deadline=None)
def test_monotone_in_k_and_full_depth_is_one(data):
    outcome, catalog = data
    d = outcome.class_count
    for g in _groups_with_samples(outcome, catalog):
        for fn in (balanced_accuracy, unbalanced_accuracy):
            accs = [fn(outcome, k, g, catalog) for k in range(1, d + 1)]
            assert all(a <= b for a, b in zip(accs, accs[1:]))
            assert accs[-1] == 1.0


@given(evaluation_sets())
@settings(max_examples=60, deadline=None)
def test_group_additivity(data):
    outcome, catalog = data
    totals = outcome.class_totals()
    n_rare = sum(totals[j] for j in catalog.classes_in("rare"))
    n_common = sum(totals[j] for j in catalog.classes_in("common"))
    if not (n_rare and n_common):
        return
    for k in (1, 2):
        mixed = (
            n_rare * unbalanced_accuracy(outcome, k, "rare", catalog)
            + n_common * unbalanced_accuracy(outcome, k, "common", catalog)
        ) / (n_rare + n_common)
        assert unbalanced_accuracy(outcome, k, "all", catalog) == pytest.approx(mixed, abs=1e-12)


def test_balanced_equals_unbalanced_for_equal_counts():
    rng = np.random.default_rng(4)
    labels = np.repeat(np.arange(4), 5)
    outcome = EvaluationOutcome.from_scores(FusedScores(rng.random((20, 4)), "r"), labels)
    catalog = ClassCatalog(("a", "b", "c", "d"))
    for k in (1, 2, 3):
        assert balanced_accuracy(outcome, k, "all", catalog) == unbalanced_accuracy(outcome, k, "all", catalog)


@given(evaluation_sets(), st.randoms(use_true_random=False))
@settings(max_examples=40, deadline=None)
def test_merge_is_order_free(data, rnd):
    outcome, catalog = data
    idx = list(range(len(outcome)))
    rnd.shuffle(idx)
    cut = len(idx) // 2
    parts = [
        EvaluationOutcome(outcome.class_count, outcome.labels[idx[:cut]], outcome.ranks[idx[:cut]]),
        EvaluationOutcome(outcome.class_count, outcome.labels[idx[cut:]], outcome.ranks[idx[cut:]]),
    ]
    merged = merge_outcomes(parts[::-1])
    for g in _groups_with_samples(outcome, catalog):
        for fn in (balanced_accuracy, unbalanced_accuracy):
            assert fn(merged, 1, g, catalog) == fn(outcome, 1, g, catalog)


def test_outcome_validation():
    with pytest.raises(MetricsError):
        EvaluationOutcome(2, labels=[0, 2], ranks=[1, 1])
    with pytest.raises(MetricsError):
        EvaluationOutcome(2, labels=[0], ranks=[3])
    with pytest.raises(MetricsError):
        EvaluationOutcome(2).merge(EvaluationOutcome(3))
