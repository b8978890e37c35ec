"""Balanced and unbalanced top-k accuracy, overall and per class group."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fusion import FusedScores, FusionConfig, descending_order

RARE = "rare"
COMMON = "common"
ALL = "all"
GROUPS = (RARE, COMMON, ALL)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ClassCatalog:
    """Class names, training counts and the optional rare/common split."""

    class_names: tuple[str, ...]
    train_counts: tuple[int, ...] | None = None
    groups: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        d = len(self.class_names)
        if d < 1:
            raise MetricsError("catalog needs at least one class")
        if len(set(self.class_names)) != d:
            raise MetricsError("class names must be unique")
        if self.train_counts is not None:
            if len(self.train_counts) != d:
                raise MetricsError("train_counts length differs from class count")
            if any(c < 0 for c in self.train_counts):
                raise MetricsError("train counts must be non-negative")
        if self.groups is not None:
            if len(self.groups) != d:
                raise MetricsError("groups length differs from class count")
            bad = sorted(set(self.groups) - {RARE, COMMON})
            if bad:
                raise MetricsError(f"group values must be 'rare' or 'common', got {bad}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def classes_in(self, group: str) -> list[int]:
        if group == ALL:
            return list(range(self.class_count))
        if group not in (RARE, COMMON):
            raise MetricsError(f"unknown group {group!r}")
        if self.groups is None:
            raise MetricsError(
                f"group {group!r} requested but the catalog has no rare/common assignment"
            )
        return [j for j, g in enumerate(self.groups) if g == group]


def assign_groups(
    catalog: ClassCatalog,
    threshold: int | None = None,
    explicit: Mapping[int, str] | Sequence[str] | None = None,
) -> ClassCatalog:
    """Return ``catalog`` with every class marked rare or common.

    An explicit assignment (from a group file) wins; otherwise a class is
    rare iff its training count is below ``threshold``.
    """
    d = catalog.class_count
    if explicit is not None:
        if isinstance(explicit, Mapping):
            missing = [j for j in range(d) if j not in explicit]
            if missing:
                raise MetricsError(f"group assignment missing for classes {missing}")
            groups = tuple(explicit[j] for j in range(d))
        else:
            groups = tuple(explicit)
        return ClassCatalog(catalog.class_names, catalog.train_counts, groups)
    if threshold is None:
        if catalog.groups is not None:
            return catalog
        raise MetricsError("no group assignment: give a threshold or an explicit group file")
    if threshold < 1:
        raise MetricsError(f"threshold must be >= 1, got {threshold}")
    if catalog.train_counts is None:
        raise MetricsError("train counts missing and no explicit group file given")
    groups = tuple(RARE if c < threshold else COMMON for c in catalog.train_counts)
    return ClassCatalog(catalog.class_names, catalog.train_counts, groups)


def label_ranks(f: FusedScores, labels) -> np.ndarray:
    """1-based position of each label in the deterministic descending ordering."""
    order = descending_order(f.values, f.tiebreak)
    labels = np.asarray(labels)
    hit = order == labels[..., None]
    return np.argmax(hit, axis=-1) + 1


def topk_hit(f: FusedScores, label: int, k: int, cfg: FusionConfig | None = None) -> bool:
    """True iff ``label`` is among the first ``k`` classes of the fused ordering."""
    d = f.class_count
    if not 1 <= k <= d:
        raise MetricsError(f"k must lie in [1, {d}], got {k}")
    if not 0 <= label < d:
        raise MetricsError(f"label {label} out of range for {d} classes")
    return bool(label_ranks(f, label) <= k)


@dataclass
class EvaluationOutcome:
    """Accumulated ground-truth ranks for a set of labeled samples.

    Accumulation is order-free: every accuracy is computed from integer
    counts, so merging partial outcomes in any order gives identical
    results.
    """

    class_count: int
    labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    ranks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if self.labels.shape != self.ranks.shape:
            raise MetricsError("labels and ranks must align")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise MetricsError("label out of range")
        if self.ranks.size and (self.ranks.min() < 1 or self.ranks.max() > self.class_count):
            raise MetricsError("rank out of range")

    @classmethod
    def from_scores(cls, f: FusedScores, labels) -> "EvaluationOutcome":
        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        values = np.atleast_2d(f.values)
        tb = None if f.tiebreak is None else np.atleast_2d(f.tiebreak)
        ranks = label_ranks(FusedScores(values, f.method, tb), labels)
        return cls(values.shape[-1], labels, ranks)

    def merge(self, other: "EvaluationOutcome") -> "EvaluationOutcome":
        if other.class_count != self.class_count:
            raise MetricsError("cannot merge outcomes with different class counts")
        return EvaluationOutcome(
            self.class_count,
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.ranks, other.ranks]),
        )

    def __len__(self) -> int:
        return int(self.labels.size)

    def class_totals(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def per_class_correct_at_k(self, k: int) -> np.ndarray:
        return np.bincount(self.labels[self.ranks <= k], minlength=self.class_count)

    def per_class_accuracy(self, k: int = 1) -> dict[int, float]:
        """Top-k accuracy of each class that has at least one sample."""
        totals = self.class_totals()
        hits = self.per_class_correct_at_k(k)
        return {j: hits[j] / totals[j] for j in range(self.class_count) if totals[j]}


def merge_outcomes(outcomes: Iterable[EvaluationOutcome]) -> EvaluationOutcome:
    outcomes = list(outcomes)
    if not outcomes:
        raise MetricsError("nothing to merge")
    merged = outcomes[0]
    for o in outcomes[1:]:
        merged = merged.merge(o)
    return merged


def _check_k(k: int, d: int) -> None:
    if not 1 <= k <= d:
        raise MetricsError(f"k must lie in [1, {d}], got {k}")


def balanced_accuracy(
    outcomes: EvaluationOutcome, k: int, group: str, catalog: ClassCatalog
) -> float:
    """Mean per-class top-k accuracy over the group's classes that have samples."""
    _check_k(k, outcomes.class_count)
    totals = outcomes.class_totals()
    hits = outcomes.per_class_correct_at_k(k)
    included = [j for j in catalog.classes_in(group) if totals[j] > 0]
    if not included:
        raise MetricsError(f"group {group!r} has no classes with evaluation samples")
    acc = sum((Fraction(int(hits[j]), int(totals[j])) for j in included), Fraction(0))
    return float(acc / len(included))


def unbalanced_accuracy(
    outcomes: EvaluationOutcome, k: int, group: str, catalog: ClassCatalog
) -> float:
    """Fraction of the group's samples whose label ranks within the top k."""
    _check_k(k, outcomes.class_count)
    members = catalog.classes_in(group)
    totals = outcomes.class_totals()[members]
    n = int(totals.sum())
    if n == 0:
        raise MetricsError(f"group {group!r} has no evaluation samples")
    hits = int(outcomes.per_class_correct_at_k(k)[members].sum())
    return float(Fraction(hits, n))
