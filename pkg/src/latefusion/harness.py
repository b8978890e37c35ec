"""Evaluation grid: fusion method x modality subset x metric x k x class group."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fusion import METHODS, FusionConfig, fuse, fuse_sum
from .ingestion import LabeledSample, ModalityRegistry, validate_sample
from .metrics import (
    GROUPS,
    ClassCatalog,
    EvaluationOutcome,
    MetricsError,
    balanced_accuracy,
    merge_outcomes,
    unbalanced_accuracy,
)

log = logging.getLogger(__name__)

DEFAULT_MODALITY_COUNTS = (2, 4, 8)
METRIC_KINDS = ("balanced", "unbalanced")
CSV_COLUMNS = (
    "section",
    "config",
    "modalities",
    "metric",
    "k",
    "group",
    "class",
    "accuracy_pct",
    "accuracy",
)


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    methods: tuple[str, ...] = METHODS
    # None means the default (2, 4, 8) capped at the available modalities
    modality_counts: tuple[int, ...] | None = None
    subset_seed: int = 0
    topk: tuple[int, ...] = (1, 5)
    groups: tuple[str, ...] = GROUPS
    config: FusionConfig = field(default_factory=FusionConfig)
    strict: bool = True
    tolerance: float = 1e-4

    def __post_init__(self) -> None:
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise HarnessError(f"unknown fusion methods {unknown}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise HarnessError("duplicate methods in plan")
        if not self.topk or any(k < 1 for k in self.topk):
            raise HarnessError("topk values must be positive")
        bad = [g for g in self.groups if g not in GROUPS]
        if bad or not self.groups:
            raise HarnessError(f"unknown groups {bad}")

    def resolve_counts(self, available: int) -> tuple[int, ...]:
        if self.modality_counts is None:
            return tuple(sorted({min(c, available) for c in DEFAULT_MODALITY_COUNTS}))
        for c in self.modality_counts:
            if not 1 <= c <= available:
                raise HarnessError(f"modality count {c} outside [1, {available}]")
        return tuple(sorted(set(self.modality_counts)))


@dataclass
class EvaluationReport:
    plan: ExperimentPlan
    class_names: tuple[str, ...]
    class_groups: tuple[str, ...] | None
    subsets: dict[int, tuple[str, ...]]
    # (method, modality count, metric kind, k, group) -> accuracy
    grid: dict[tuple[str, int, str, int, str], float]
    # (modality, metric kind, k, group) -> accuracy
    unimodal: dict[tuple[str, str, int, str], float]
    # (configuration, class index) -> top-1 accuracy
    per_class: dict[tuple[str, int], float]
    sample_count: int
    excluded_count: int
    inputs: dict[str, str] = field(default_factory=dict)

    def provenance_lines(self) -> list[str]:
        cfg = self.plan.config
        lines = [
            "latefusion evaluation report",
            f"subset_seed={self.plan.subset_seed}",
            "config: " + " ".join(f"{k}={v}" for k, v in asdict(cfg).items()),
            f"mode={'strict' if self.plan.strict else 'lenient'} tolerance={self.plan.tolerance:g}",
            "methods=" + ",".join(self.plan.methods),
            "topk=" + ",".join(map(str, self.plan.topk)),
            "groups=" + ",".join(self.plan.groups),
        ]
        for c, names in sorted(self.subsets.items()):
            lines.append(f"subset_{c}=" + ";".join(names))
        lines.append(f"samples={self.sample_count} excluded={self.excluded_count}")
        for name, digest in sorted(self.inputs.items()):
            lines.append(f"input {name} sha256={digest}")
        return lines


def config_label(method: str, count: int) -> str:
    return f"{method}@{count}"


def unimodal_label(modality: str) -> str:
    return f"unimodal:{modality}"


def modality_permutation(registry: ModalityRegistry | Sequence[str], seed: int) -> tuple[str, ...]:
    names = registry.names if isinstance(registry, ModalityRegistry) else tuple(registry)
    perm = np.random.default_rng(seed).permutation(len(names))
    return tuple(names[i] for i in perm)


def select_modalities(registry: ModalityRegistry | Sequence[str], count: int, seed: int) -> tuple[str, ...]:
    """First ``count`` modalities of a seeded permutation of the registry.

    The permutation depends only on the registry and seed, so subsets for
    increasing counts are nested.
    """
    names = registry.names if isinstance(registry, ModalityRegistry) else tuple(registry)
    if not 1 <= count <= len(names):
        raise HarnessError(f"modality count {count} outside [1, {len(names)}]")
    return modality_permutation(names, seed)[:count]


def _batches(
    samples: Sequence[LabeledSample], modalities: Sequence[str], plan: ExperimentPlan
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack samples into (B, d, N) arrays, one batch per present-modality pattern."""
    groups: dict[tuple[str, ...], tuple[list, list]] = {}
    for s in samples:
        ps = validate_sample(s, modalities, plan.tolerance, strict=plan.strict)
        if ps is None:
            continue
        key = tuple(m for m in modalities if m in s.scores)
        arrs, labels = groups.setdefault(key, ([], []))
        arrs.append(ps)
        labels.append(s.label)
    return [(np.stack(a), np.asarray(lab)) for _, (a, lab) in sorted(groups.items())]


def _evaluate(method: str, batches, cfg: FusionConfig, d: int) -> EvaluationOutcome:
    parts = [EvaluationOutcome.from_scores(fuse(method, arr, cfg), labels) for arr, labels in batches]
    if not parts:
        return EvaluationOutcome(d)
    return merge_outcomes(parts)


def _accuracies(outcome: EvaluationOutcome, plan: ExperimentPlan, catalog: ClassCatalog):
    out = {}
    for kind, fn in (("balanced", balanced_accuracy), ("unbalanced", unbalanced_accuracy)):
        for k in plan.topk:
            for group in plan.groups:
                out[(kind, k, group)] = fn(outcome, k, group, catalog)
    return out


def run_plan(
    plan: ExperimentPlan,
    samples: Sequence[LabeledSample],
    catalog: ClassCatalog,
    registry: ModalityRegistry | None = None,
    workers: int = 1,
    inputs: dict[str, str] | None = None,
) -> EvaluationReport:
    """Fuse and score every cell of the plan's grid."""
    if not samples:
        raise HarnessError("no samples to evaluate")
    d = catalog.class_count
    too_big = [k for k in plan.topk if k > d]
    if too_big:
        raise HarnessError(f"topk {too_big} exceed the class count {d}")
    if plan.config.borda_k > d and {"borda", "weighted_borda"} & set(plan.methods):
        raise HarnessError(f"borda_k={plan.config.borda_k} exceeds the class count {d}")
    for g in plan.groups:
        catalog.classes_in(g)  # fail early when rare/common is undefined
    registry = registry or ModalityRegistry.from_samples(samples)
    counts = plan.resolve_counts(len(registry))
    perm = modality_permutation(registry, plan.subset_seed)
    subsets = {c: perm[:c] for c in counts}

    if plan.strict:
        # one fixed sample set for every cell, unimodal rows included
        kept = [s for s in samples if all(m in s.scores for m in registry.names)]
    else:
        kept = list(samples)
    excluded = len(samples) - len(kept)
    if excluded:
        log.info("excluded %d of %d samples with missing modalities", excluded, len(samples))
    if not kept:
        raise HarnessError("every sample was excluded; try lenient mode")

    batches = {c: _batches(kept, subsets[c], plan) for c in counts}
    cells = [(m, c) for c in counts for m in plan.methods]

    def run_cell(cell):
        method, c = cell
        return _evaluate(method, batches[c], plan.config, d)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = dict(zip(cells, pool.map(run_cell, cells)))
    else:
        outcomes = {cell: run_cell(cell) for cell in cells}

    grid: dict = {}
    per_class: dict = {}
    for (method, c), outcome in outcomes.items():
        for (kind, k, group), acc in _accuracies(outcome, plan, catalog).items():
            grid[(method, c, kind, k, group)] = acc
        for j, acc in outcome.per_class_accuracy(1).items():
            per_class[(config_label(method, c), j)] = acc

    unimodal: dict = {}
    for m in registry.names:
        outcome = merge_outcomes(
            [EvaluationOutcome(d)]
            + [EvaluationOutcome.from_scores(fuse_sum(arr), lab) for arr, lab in _batches(kept, [m], plan)]
        )
        if len(outcome) == 0:
            continue
        for (kind, k, group), acc in _accuracies(outcome, plan, catalog).items():
            unimodal[(m, kind, k, group)] = acc
        for j, acc in outcome.per_class_accuracy(1).items():
            per_class[(unimodal_label(m), j)] = acc

    return EvaluationReport(
        plan=plan,
        class_names=catalog.class_names,
        class_groups=catalog.groups,
        subsets=subsets,
        grid=grid,
        unimodal=unimodal,
        per_class=per_class,
        sample_count=len(kept),
        excluded_count=excluded,
        inputs=dict(inputs or {}),
    )


def best_unimodal(report: EvaluationReport, metric: str = "balanced", k: int = 1, group: str = "all") -> str:
    """Modality with the highest unimodal accuracy; ties go to the earlier name."""
    scores = {m: acc for (m, kind, kk, g), acc in report.unimodal.items() if (kind, kk, g) == (metric, k, group)}
    if not scores:
        raise HarnessError(f"report has no unimodal {metric} top-{k} accuracy for group {group!r}")
    return min(scores, key=lambda m: (-scores[m], m))


@dataclass(frozen=True)
class ClassComparison:
    class_index: int
    class_name: str
    unimodal: float
    multimodal: float

    @property
    def delta(self) -> float:
        return self.multimodal - self.unimodal


def per_class_report(
    report: EvaluationReport,
    best_unimodal_name: str | None = None,
    method: str = "product",
    count: int | None = None,
) -> list[ClassComparison]:
    """Per-class top-1 accuracy of one modality next to a multimodal fusion.

    Rows are sorted by ascending unimodal accuracy, then class index.
    """
    name = best_unimodal_name or best_unimodal(report)
    count = count if count is not None else max(report.subsets)
    uni_label = unimodal_label(name)
    multi_label = config_label(method, count)
    have = {cfg for cfg, _ in report.per_class}
    for lbl in (uni_label, multi_label):
        if lbl not in have:
            raise HarnessError(f"report has no per-class results for {lbl!r}")
    rows = []
    for j, cname in enumerate(report.class_names):
        u = report.per_class.get((uni_label, j))
        m = report.per_class.get((multi_label, j))
        if u is None or m is None:
            continue
        rows.append(ClassComparison(j, cname, u, m))
    rows.sort(key=lambda r: (r.unimodal, r.class_index))
    return rows


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _full(x: float) -> str:
    return repr(float(x))


def report_rows(report: EvaluationReport, include_per_class: bool = False) -> list[list[str]]:
    """Report content as CSV rows in a fixed, plan-driven order."""
    plan = report.plan
    rows = []
    for c in sorted(report.subsets):
        for method in plan.methods:
            for kind in METRIC_KINDS:
                for k in plan.topk:
                    for group in plan.groups:
                        acc = report.grid[(method, c, kind, k, group)]
                        rows.append(["grid", method, str(c), kind, str(k), group, "", _pct(acc), _full(acc)])
    for m in sorted({key[0] for key in report.unimodal}):
        for kind in METRIC_KINDS:
            for k in plan.topk:
                for group in plan.groups:
                    acc = report.unimodal[(m, kind, k, group)]
                    rows.append(["unimodal", m, "1", kind, str(k), group, "", _pct(acc), _full(acc)])
    if include_per_class:
        configs = sorted({cfg for cfg, _ in report.per_class})
        for cfg in configs:
            mods = "1" if cfg.startswith("unimodal:") else cfg.rsplit("@", 1)[1]
            for j, cname in enumerate(report.class_names):
                acc = report.per_class.get((cfg, j))
                if acc is None:
                    continue
                group = report.class_groups[j] if report.class_groups else ""
                rows.append(["per_class", cfg, mods, "per_class", "1", group, cname, _pct(acc), _full(acc)])
    return rows


def render_csv(report: EvaluationReport, include_per_class: bool = False) -> str:
    buf = io.StringIO()
    for line in report.provenance_lines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(report_rows(report, include_per_class))
    return buf.getvalue()


def _md_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _metric_header(plan: ExperimentPlan) -> list[str]:
    return [f"{kind.capitalize()} Top-{k}" for kind in METRIC_KINDS for k in plan.topk]


def render_markdown(report: EvaluationReport, include_per_class: bool = False) -> str:
    plan = report.plan
    lines = ["# Late-fusion evaluation report", "", "```text"]
    lines += [f"# {line}" for line in report.provenance_lines()]
    lines += ["```", ""]
    for group in plan.groups:
        lines += [f"## Fusion grid, {group} classes", ""]
        rows = []
        for c in sorted(report.subsets):
            for method in plan.methods:
                vals = [_pct(report.grid[(method, c, kind, k, group)]) for kind in METRIC_KINDS for k in plan.topk]
                rows.append([method, str(c)] + vals)
        lines += _md_table(["Method", "#Mod"] + _metric_header(plan), rows)
        lines.append("")
    if report.unimodal:
        for group in plan.groups:
            lines += [f"## Unimodal, {group} classes", ""]
            rows = []
            for m in sorted({key[0] for key in report.unimodal}):
                vals = [_pct(report.unimodal[(m, kind, k, group)]) for kind in METRIC_KINDS for k in plan.topk]
                rows.append([m, "1"] + vals)
            lines += _md_table(["Modality", "#Mod"] + _metric_header(plan), rows)
            lines.append("")
    if include_per_class:
        lines += ["## Per-class top-1 accuracy", ""]
        rows = [r for r in report_rows(report, True) if r[0] == "per_class"]
        lines += _md_table(
            ["Configuration", "Class", "Group", "Accuracy"], [[r[1], r[6], r[5], r[7]] for r in rows]
        )
        lines.append("")
    return "\n".join(lines)


def emit_report(
    report: EvaluationReport,
    formats: Sequence[str] | str,
    out_dir: str | Path,
    include_per_class: bool = False,
    stem: str = "report",
) -> list[Path]:
    """Write the report as CSV and/or markdown files; returns the written paths."""
    formats = [formats] if isinstance(formats, str) else list(formats)
    renderers = {"csv": (render_csv, ".csv"), "markdown": (render_markdown, ".md")}
    bad = [f for f in formats if f not in renderers]
    if bad:
        raise HarnessError(f"unknown report formats {bad}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for fmt in formats:
            render, suffix = renderers[fmt]
            path = out / f"{stem}{suffix}"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(render(report, include_per_class))
            paths.append(path)
    except OSError as exc:
        raise HarnessError(f"cannot write report to {out}: {exc.strerror or exc}") from None
    return paths


def render_comparison(rows: Sequence[ClassComparison], fmt: str, unimodal: str, multimodal: str) -> str:
    header = ["class_index", "class_name", "unimodal_pct", "multimodal_pct", "delta_pct"]
    body = [
        [str(r.class_index), r.class_name, _pct(r.unimodal), _pct(r.multimodal), _pct(r.delta)]
        for r in rows
    ]
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# unimodal={unimodal}\n# multimodal={multimodal}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt == "markdown":
        lines = [f"# Per-class comparison: {unimodal} vs {multimodal}", ""]
        lines += _md_table(["Class", "Name", "Unimodal", "Multimodal", "Delta"], body)
        return "\n".join(lines) + "\n"
    raise HarnessError(f"unknown format {fmt!r}")


__all__ = [
    "ClassComparison",
    "EvaluationReport",
    "ExperimentPlan",
    "HarnessError",
    "MetricsError",
    "best_unimodal",
    "emit_report",
    "modality_permutation",
    "per_class_report",
    "render_comparison",
    "render_csv",
    "render_markdown",
    "run_plan",
    "select_modalities",
]
