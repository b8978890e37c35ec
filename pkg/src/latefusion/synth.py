"""Seeded synthetic prediction dumps with controllable per-modality competence.

Each modality produces a score vector by drawing standard-normal logits,
adding ``evidence`` to the true class, then lifting a chosen class above
every other logit: the true class with probability ``accuracy_target``,
otherwise a wrong class (from ``confusion_bias`` when given). The logits
are turned into probabilities with a softmax at temperature
``1 / concentration``. Keeping the evidence bump when the classifier errs
means a wrong prediction usually still ranks the true class high, which
is what gives fusion something to work with.

Every sample draws from its own generator seeded by ``(seed, index)``, so
output is independent of how generation is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ingestion import LabeledSample
from .metrics import ClassCatalog, assign_groups

# minimum logit gap between the chosen class and the runner-up
_MARGIN = 0.1


@dataclass(frozen=True)
class ModalityProfile:
    name: str
    accuracy_target: float
    confusion_bias: Mapping[int, Sequence[int]] | None = None
    concentration: float = 4.0
    evidence: float = 1.0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("modality name must be non-empty")
        if not 0.0 < self.accuracy_target <= 1.0:
            raise ValueError(f"accuracy_target must lie in (0, 1], got {self.accuracy_target}")
        if not self.concentration > 0:
            raise ValueError(f"concentration must be positive, got {self.concentration}")
        if not np.isfinite(self.evidence) or self.evidence < 0:
            raise ValueError(f"evidence must be finite and >= 0, got {self.evidence}")


def shifted_confusions(class_count: int, offset: int) -> dict[int, list[int]]:
    """Confuse every class ``t`` with ``(t + offset) % class_count``."""
    if offset % class_count == 0:
        raise ValueError("offset must not map a class onto itself")
    return {t: [(t + offset) % class_count] for t in range(class_count)}


def imbalanced_weights(class_count: int, ratio: float) -> np.ndarray:
    """Geometric class weights falling from 1 to ``1/ratio`` across the classes."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    if class_count == 1:
        return np.ones(1)
    w = ratio ** (-np.arange(class_count) / (class_count - 1))
    return w / w.sum()


def _check_profiles(profiles: Sequence[ModalityProfile], d: int) -> None:
    if not profiles:
        raise ValueError("need at least one modality profile")
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise ValueError("modality names must be unique")
    for p in profiles:
        for true, wrong in (p.confusion_bias or {}).items():
            if not 0 <= true < d:
                raise ValueError(f"{p.name}: confusion_bias class {true} out of range")
            if not wrong:
                raise ValueError(f"{p.name}: empty confusion list for class {true}")
            if any(not 0 <= w < d or w == true for w in wrong):
                raise ValueError(f"{p.name}: confusion_bias for {true} must list other valid classes")


def _score_vector(rng: np.random.Generator, profile: ModalityProfile, label: int, d: int) -> np.ndarray:
    correct = rng.random() < profile.accuracy_target
    if correct:
        chosen = label
    else:
        bias = (profile.confusion_bias or {}).get(label)
        if bias:
            chosen = int(bias[rng.integers(len(bias))])
        else:
            chosen = int(rng.integers(d - 1))
            chosen += chosen >= label
    z = rng.normal(size=d)
    z[label] += profile.evidence
    z[chosen] = z.max() + _MARGIN + rng.exponential()
    e = np.exp(profile.concentration * (z - z[chosen]))
    return e / e.sum()


def generate_sample(
    index: int,
    profiles: Sequence[ModalityProfile],
    class_count: int,
    seed: int,
    class_weights: np.ndarray | None = None,
) -> LabeledSample:
    rng = np.random.default_rng([seed, index])
    if class_weights is None:
        label = int(rng.integers(class_count))
    else:
        label = int(rng.choice(class_count, p=class_weights))
    scores = {p.name: _score_vector(rng, p, label, class_count) for p in profiles}
    return LabeledSample(f"s{index:06d}", label, scores)


def generate(
    profiles: Sequence[ModalityProfile],
    class_count: int,
    samples: int,
    seed: int,
    class_weights: Sequence[float] | None = None,
) -> list[LabeledSample]:
    """Generate ``samples`` labeled samples, ordered by sample index."""
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    _check_profiles(profiles, class_count)
    weights = None
    if class_weights is not None:
        weights = np.asarray(class_weights, dtype=np.float64)
        if weights.shape != (class_count,) or np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("class_weights must be d non-negative numbers with a positive sum")
        weights = weights / weights.sum()
    return [generate_sample(i, profiles, class_count, seed, weights) for i in range(samples)]


def synthetic_catalog(
    samples: Sequence[LabeledSample], class_count: int, rare_threshold: int | None = None
) -> ClassCatalog:
    """Catalog whose training counts are the generated per-class sample counts."""
    counts = np.bincount([s.label for s in samples], minlength=class_count)
    width = len(str(class_count - 1))
    catalog = ClassCatalog(
        tuple(f"class_{j:0{width}d}" for j in range(class_count)),
        tuple(int(c) for c in counts),
    )
    if rare_threshold is not None:
        catalog = assign_groups(catalog, rare_threshold)
    return catalog


@dataclass
class SynthSettings:
    """Convenience bundle used by the command line."""

    modalities: int = 8
    accuracies: Sequence[float] = field(default_factory=lambda: [0.6])
    concentration: float = 4.0
    evidence: float = 1.0
    disjoint_confusion: bool = False

    def profiles(self, class_count: int) -> list[ModalityProfile]:
        accs = list(self.accuracies)
        if len(accs) == 1:
            accs = accs * self.modalities
        if len(accs) != self.modalities:
            raise ValueError("give one accuracy or one per modality")
        out = []
        for i, acc in enumerate(accs):
            bias = None
            if self.disjoint_confusion:
                offset = i % (class_count - 1) + 1
                bias = shifted_confusions(class_count, offset)
            out.append(
                ModalityProfile(f"mod{i}", acc, bias, self.concentration, self.evidence)
            )
        return out
