"""Decision-level fusion operators.

Every operator takes a prediction set: an array of shape ``(..., d, N)``
holding one probability vector per classifier in each column (``d``
classes, ``N`` classifiers). Leading axes, if any, are treated as a batch
of independent samples. Operators return :class:`FusedScores` with values
of shape ``(..., d)``.

Reductions over the classifier axis sort their operands first, so the
result is a function of the multiset of columns and does not depend on
column order down to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "METHODS",
    "SCORE_LEVEL",
    "RANK_LEVEL",
    "FusionConfig",
    "FusedScores",
    "check_prediction_set",
    "compute_ranks",
    "descending_order",
    "final_decision",
    "fuse",
    "fuse_sum",
    "fuse_weighted_sum",
    "fuse_median",
    "fuse_max",
    "fuse_product",
    "fuse_weighted_product",
    "majority_vote",
    "borda_count",
    "weighted_borda_count",
    "reciprocal_rank_fusion",
    "softmax_weights",
]

TIE_BREAK_POLICIES = ("lowest_index",)


@dataclass(frozen=True)
class FusionConfig:
    """Hyperparameters shared by the fusion operators."""

    borda_k: int = 5
    rrf_m: int = 60
    product_gamma: float = 1.0
    tie_break: str = "lowest_index"
    # 0 disables flooring; exact zeros then veto a class in product fusion
    product_floor: float = 0.0

    def __post_init__(self) -> None:
        if int(self.borda_k) != self.borda_k or self.borda_k < 1:
            raise ValueError(f"borda_k must be a positive integer, got {self.borda_k!r}")
        if int(self.rrf_m) != self.rrf_m or self.rrf_m < 0:
            raise ValueError(f"rrf_m must be a non-negative integer, got {self.rrf_m!r}")
        if not np.isfinite(self.product_gamma) or self.product_gamma <= 0:
            raise ValueError(f"product_gamma must be positive, got {self.product_gamma!r}")
        if self.tie_break not in TIE_BREAK_POLICIES:
            raise ValueError(f"unknown tie_break policy {self.tie_break!r}")
        if not 0.0 <= self.product_floor < 1.0:
            raise ValueError(f"product_floor must lie in [0, 1), got {self.product_floor!r}")


@dataclass(frozen=True, eq=False)
class FusedScores:
    """Fused per-class scores produced by one operator.

    ``tiebreak`` is an optional secondary key consulted when ``values``
    tie; only majority voting sets it (to the mean scores).
    """

    values: np.ndarray
    method: str
    tiebreak: np.ndarray | None = None

    @property
    def class_count(self) -> int:
        return self.values.shape[-1]


def check_prediction_set(scores, tolerance: float = 1e-4) -> np.ndarray:
    """Validate and return ``scores`` as a float64 array of shape (..., d, N)."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"prediction set needs shape (d, N), got {arr.shape}")
    if arr.shape[-1] < 1 or arr.shape[-2] < 1:
        raise ValueError(f"prediction set must have d >= 1 and N >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("prediction set entries must be finite and non-negative")
    sums = arr.sum(axis=-2)
    if np.any(np.abs(sums - 1.0) > tolerance):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"column sums deviate from 1 by up to {worst:.3g} (tolerance {tolerance:g})")
    return arr


def _as_scores(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"prediction set needs shape (d, N), got {arr.shape}")
    return arr


# numpy's reductions may regroup terms depending on memory layout, so
# accumulate explicitly, left to right, over the sorted operands
def _sum_over_classifiers(x: np.ndarray) -> np.ndarray:
    xs = np.sort(x, axis=-1)
    acc = xs[..., 0].copy()
    for i in range(1, xs.shape[-1]):
        acc += xs[..., i]
    return acc


def _prod_over_classifiers(x: np.ndarray) -> np.ndarray:
    xs = np.sort(x, axis=-1)
    acc = xs[..., 0].copy()
    for i in range(1, xs.shape[-1]):
        acc *= xs[..., i]
    return acc


def softmax_weights(p) -> np.ndarray:
    """Per-class softmax across classifiers: ``w[j, i] = e^{s[j, i]} / sum_n e^{s[j, n]}``."""
    s = _as_scores(p)
    e = np.exp(s)
    return e / _sum_over_classifiers(e)[..., None]


def fuse_sum(p, cfg: FusionConfig | None = None) -> FusedScores:
    """Average the classifiers' probability vectors."""
    s = _as_scores(p)
    return FusedScores(_sum_over_classifiers(s) / s.shape[-1], "sum")


def fuse_weighted_sum(p, cfg: FusionConfig | None = None) -> FusedScores:
    s = _as_scores(p)
    ws = softmax_weights(s) * s
    return FusedScores(_sum_over_classifiers(ws) / s.shape[-1], "weighted_sum")


def fuse_median(p, cfg: FusionConfig | None = None) -> FusedScores:
    """Per-class median over classifiers; mean of the middle pair for even N."""
    s = _as_scores(p)
    return FusedScores(np.median(s, axis=-1), "median")


def fuse_max(p, cfg: FusionConfig | None = None) -> FusedScores:
    s = _as_scores(p)
    return FusedScores(s.max(axis=-1), "max")


def fuse_product(p, cfg: FusionConfig | None = None) -> FusedScores:
    cfg = cfg or FusionConfig()
    s = _as_scores(p)
    if cfg.product_floor > 0:
        s = np.maximum(s, cfg.product_floor)
    return FusedScores(cfg.product_gamma * _prod_over_classifiers(s), "product")


def fuse_weighted_product(p, cfg: FusionConfig | None = None) -> FusedScores:
    cfg = cfg or FusionConfig()
    s = _as_scores(p)
    if cfg.product_floor > 0:
        s = np.maximum(s, cfg.product_floor)
    ws = softmax_weights(s) * s
    return FusedScores(cfg.product_gamma * _prod_over_classifiers(ws), "weighted_product")


def compute_ranks(p, cfg: FusionConfig | None = None) -> np.ndarray:
    """1-based rank of every class within each classifier's column.

    Equal scores are ranked by ascending class index.
    """
    s = _as_scores(p)
    order = np.argsort(-s, axis=-2, kind="stable")
    ranks = np.empty(s.shape, dtype=np.int64)
    positions = np.broadcast_to(
        np.arange(1, s.shape[-2] + 1, dtype=np.int64)[:, None], s.shape
    )
    np.put_along_axis(ranks, order, positions, axis=-2)
    return ranks


def majority_vote(p, cfg: FusionConfig | None = None) -> FusedScores:
    """Count each classifier's top-1 class.

    Ties between vote counts are broken by the mean scores, then by
    class index; the mean scores ride along as ``tiebreak``.
    """
    s = _as_scores(p)
    d = s.shape[-2]
    top = np.argmax(s, axis=-2)  # first maximum == lowest index on ties
    counts = (top[..., None, :] == np.arange(d)[:, None]).sum(axis=-1)
    return FusedScores(
        counts.astype(np.float64), "majority_vote", tiebreak=fuse_sum(s).values
    )


def _borda_points(s: np.ndarray, k: int) -> np.ndarray:
    d = s.shape[-2]
    if k > d:
        raise ValueError(f"borda_k={k} exceeds the number of classes d={d}")
    ranks = compute_ranks(s)
    points = np.clip(k + 1 - ranks, 0, None)
    return points.sum(axis=-1)


def borda_count(p, cfg: FusionConfig | None = None) -> FusedScores:
    """Borda count: rank 1 earns ``k`` points, rank ``k`` earns 1, the rest 0."""
    cfg = cfg or FusionConfig()
    s = _as_scores(p)
    return FusedScores(_borda_points(s, cfg.borda_k).astype(np.float64), "borda")


def weighted_borda_count(p, cfg: FusionConfig | None = None) -> FusedScores:
    """Borda points scaled element-wise by the mean probability vector."""
    cfg = cfg or FusionConfig()
    s = _as_scores(p)
    points = _borda_points(s, cfg.borda_k)
    return FusedScores(fuse_sum(s).values * points, "weighted_borda")


def reciprocal_rank_fusion(p, cfg: FusionConfig | None = None) -> FusedScores:
    cfg = cfg or FusionConfig()
    s = _as_scores(p)
    recip = 1.0 / (cfg.rrf_m + compute_ranks(s)).astype(np.float64)
    return FusedScores(_sum_over_classifiers(recip), "rrf")


_OPERATORS: dict[str, Callable[..., FusedScores]] = {
    "sum": fuse_sum,
    "weighted_sum": fuse_weighted_sum,
    "median": fuse_median,
    "max": fuse_max,
    "product": fuse_product,
    "weighted_product": fuse_weighted_product,
    "majority_vote": majority_vote,
    "borda": borda_count,
    "weighted_borda": weighted_borda_count,
    "rrf": reciprocal_rank_fusion,
}

METHODS: tuple[str, ...] = tuple(_OPERATORS)
SCORE_LEVEL = METHODS[:6]
RANK_LEVEL = METHODS[6:]


def fuse(method: str, p, cfg: FusionConfig | None = None) -> FusedScores:
    """Dispatch to the operator registered under ``method``."""
    try:
        op = _OPERATORS[method]
    except KeyError:
        raise ValueError(f"unknown fusion method {method!r}; choose from {', '.join(METHODS)}") from None
    return op(p, cfg or FusionConfig())


def descending_order(values, tiebreak=None) -> np.ndarray:
    """Class indices sorted by descending value (then tiebreak, then index)."""
    v = np.asarray(values, dtype=np.float64)
    keys = [-v] if tiebreak is None else [-np.asarray(tiebreak, dtype=np.float64), -v]
    # lexsort is stable, so full ties fall back to ascending class index
    return np.lexsort(keys, axis=-1)


def final_decision(f: FusedScores, cfg: FusionConfig | None = None):
    """Predicted class index (an int, or an array for batched scores)."""
    top = descending_order(f.values, f.tiebreak)[..., 0]
    return int(top) if top.ndim == 0 else top
