"""Readers and writers for prediction dumps and class catalogs.

Prediction dump: UTF-8 JSON Lines, one record per (sample, modality)::

    {"sample_id": "s0001", "modality": "nir_front", "label": 3, "scores": [0.1, ...]}

Catalog: delimiter-separated table with a header row and the columns
``class_index, class_name, train_count[, group]``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import COMMON, RARE, ClassCatalog

log = logging.getLogger(__name__)

RECORD_FIELDS = ("sample_id", "modality", "label", "scores")
CATALOG_COLUMNS = ("class_index", "class_name", "train_count", "group")
DEFAULT_TOLERANCE = 1e-4


class IngestionError(ValueError):
    """Raised on malformed or inconsistent input files."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    modality: str
    label: int
    scores: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "modality": self.modality,
                "label": self.label,
                "scores": list(self.scores),
            }
        )


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One evaluation sample with a probability vector per present modality."""

    sample_id: str
    label: int
    scores: Mapping[str, np.ndarray]

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.scores)

    def records(self) -> list[PredictionRecord]:
        return [
            PredictionRecord(self.sample_id, m, self.label, tuple(float(x) for x in v))
            for m, v in self.scores.items()
        ]


@dataclass(frozen=True)
class ModalityRegistry:
    """Modality names in canonical (sorted) order with per-modality record counts."""

    names: tuple[str, ...]
    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise IngestionError("modality names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample]) -> "ModalityRegistry":
        counts: Counter[str] = Counter()
        for s in samples:
            counts.update(s.scores.keys())
        names = tuple(sorted(counts))
        return cls(names, {n: counts[n] for n in names})


def check_simplex(
    scores: Sequence[float] | np.ndarray,
    d: int,
    tolerance: float = DEFAULT_TOLERANCE,
    renormalize: bool = False,
) -> np.ndarray:
    """Validate one probability vector; optionally rescale it to sum to 1."""
    vec = np.asarray(scores, dtype=np.float64)
    if vec.ndim != 1 or vec.size != d:
        raise IngestionError(f"expected {d} scores, got {vec.size}")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise IngestionError("scores must be finite and non-negative")
    total = float(vec.sum())
    if renormalize:
        if total <= 0:
            raise IngestionError("cannot renormalize a score vector summing to 0")
        return vec / total
    if abs(total - 1.0) > tolerance:
        raise IngestionError(
            f"scores sum to {total:.6g}, outside tolerance {tolerance:g} (enable renormalization?)"
        )
    return vec


def _parse_record(obj, d: int, strict: bool, path, lineno: int) -> PredictionRecord:
    if not isinstance(obj, dict):
        raise IngestionError("record must be a JSON object", path, lineno)
    missing = [f for f in RECORD_FIELDS if f not in obj]
    if missing:
        raise IngestionError(f"missing fields {missing}", path, lineno)
    unknown = sorted(set(obj) - set(RECORD_FIELDS))
    if unknown:
        if strict:
            raise IngestionError(f"unknown fields {unknown}", path, lineno)
        log.warning("%s:%d: ignoring unknown fields %s", path, lineno, unknown)
    sample_id, modality, label, scores = (obj[f] for f in RECORD_FIELDS)
    if not isinstance(sample_id, str) or not sample_id:
        raise IngestionError("sample_id must be a non-empty string", path, lineno)
    if not isinstance(modality, str) or not modality:
        raise IngestionError("modality must be a non-empty string", path, lineno)
    if isinstance(label, bool) or not isinstance(label, int):
        raise IngestionError("label must be an integer", path, lineno)
    if not 0 <= label < d:
        raise IngestionError(f"label {label} out of range for {d} classes", path, lineno)
    if not isinstance(scores, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in scores
    ):
        raise IngestionError("scores must be an array of numbers", path, lineno)
    if len(scores) != d:
        raise IngestionError(f"dimension mismatch: {len(scores)} scores for {d} classes", path, lineno)
    return PredictionRecord(sample_id, modality, label, tuple(float(x) for x in scores))


def load_predictions(
    path: str | Path,
    catalog: ClassCatalog,
    renormalize: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
    strict: bool = True,
) -> list[LabeledSample]:
    """Parse a prediction dump into samples, in order of first appearance."""
    d = catalog.class_count
    labels: dict[str, int] = {}
    per_sample: dict[str, dict[str, np.ndarray]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"malformed line: {exc.msg}", path, lineno) from None
            rec = _parse_record(obj, d, strict, path, lineno)
            try:
                vec = check_simplex(rec.scores, d, tolerance, renormalize)
            except IngestionError as exc:
                raise IngestionError(str(exc), path, lineno) from None
            known = labels.setdefault(rec.sample_id, rec.label)
            if known != rec.label:
                raise IngestionError(
                    f"label conflict for sample {rec.sample_id!r}: {known} vs {rec.label}",
                    path,
                    lineno,
                )
            slot = per_sample.setdefault(rec.sample_id, {})
            if rec.modality in slot:
                raise IngestionError(
                    f"duplicate modality {rec.modality!r} for sample {rec.sample_id!r}",
                    path,
                    lineno,
                )
            slot[rec.modality] = vec
    if not per_sample:
        raise IngestionError("no prediction records found", path)
    return [LabeledSample(sid, labels[sid], per_sample[sid]) for sid in per_sample]


def write_predictions(samples: Iterable[LabeledSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            for rec in s.records():
                fh.write(rec.to_json() + "\n")


def validate_sample(
    sample: LabeledSample,
    modalities: Sequence[str] | ModalityRegistry,
    tolerance: float = DEFAULT_TOLERANCE,
    strict: bool = True,
    renormalize: bool = False,
) -> np.ndarray | None:
    """Assemble a sample's (d, N) prediction set, columns in ``modalities`` order.

    In strict mode a sample lacking any requested modality is excluded
    (``None``); in lenient mode it is evaluated on the modalities it has.
    """
    names = modalities.names if isinstance(modalities, ModalityRegistry) else tuple(modalities)
    if not sample.scores:
        raise IngestionError(f"sample {sample.sample_id!r} has no modalities")
    present = [m for m in names if m in sample.scores]
    missing = [m for m in names if m not in sample.scores]
    if missing and strict:
        log.info("excluding sample %s: missing modalities %s", sample.sample_id, missing)
        return None
    if not present:
        log.info("excluding sample %s: none of %s present", sample.sample_id, list(names))
        return None
    d = len(next(iter(sample.scores.values())))
    cols = [check_simplex(sample.scores[m], d, tolerance, renormalize) for m in present]
    return np.stack(cols, axis=-1)


def _sniff_dialect(text: str):
    try:
        return csv.Sniffer().sniff(text.splitlines()[0], delimiters=",\t;|")
    except (csv.Error, IndexError):
        return csv.excel


def load_catalog(path: str | Path) -> ClassCatalog:
    """Read a class catalog; a ``group`` column, if filled in, is honoured."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines(), dialect=_sniff_dialect(text))
    header = [h.strip() for h in reader.fieldnames or []]
    reader.fieldnames = header
    for col in CATALOG_COLUMNS[:3]:
        if col not in header:
            raise IngestionError(f"catalog lacks column {col!r}", path)
    rows: dict[int, tuple[str, int | None, str | None]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            idx = int(row["class_index"])
        except (TypeError, ValueError):
            raise IngestionError("class_index must be an integer", path, lineno) from None
        if idx in rows:
            raise IngestionError(f"duplicate class_index {idx}", path, lineno)
        name = (row["class_name"] or "").strip()
        if not name:
            raise IngestionError("empty class_name", path, lineno)
        raw_count = (row["train_count"] or "").strip()
        count = None
        if raw_count:
            try:
                count = int(raw_count)
            except ValueError:
                raise IngestionError(f"train_count {raw_count!r} is not an integer", path, lineno) from None
            if count < 0:
                raise IngestionError(f"negative train_count {count}", path, lineno)
        group = (row.get("group") or "").strip() or None
        if group is not None and group not in (RARE, COMMON):
            raise IngestionError(f"group must be 'rare' or 'common', got {group!r}", path, lineno)
        rows[idx] = (name, count, group)
    if sorted(rows) != list(range(len(rows))):
        raise IngestionError("class_index values must be 0..d-1", path)
    if not rows:
        raise IngestionError("catalog is empty", path)
    names = tuple(rows[j][0] for j in range(len(rows)))
    if len(set(names)) != len(names):
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        raise IngestionError(f"duplicate class names {dupes}", path)
    counts = [rows[j][1] for j in range(len(rows))]
    groups = [rows[j][2] for j in range(len(rows))]
    if any(g is not None for g in groups) and any(g is None for g in groups):
        raise IngestionError("group column must be filled for every class or none", path)
    return ClassCatalog(
        names,
        None if any(c is None for c in counts) else tuple(counts),
        None if groups[0] is None else tuple(groups),
    )


def write_catalog(catalog: ClassCatalog, path: str | Path) -> None:
    cols = list(CATALOG_COLUMNS if catalog.groups is not None else CATALOG_COLUMNS[:3])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for j, name in enumerate(catalog.class_names):
            row = [j, name, "" if catalog.train_counts is None else catalog.train_counts[j]]
            if catalog.groups is not None:
                row.append(catalog.groups[j])
            w.writerow(row)


def load_group_file(path: str | Path, catalog: ClassCatalog) -> dict[int, str]:
    """Read an explicit rare/common assignment keyed by class_index or class_name."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines(), dialect=_sniff_dialect(text))
    reader.fieldnames = [h.strip() for h in reader.fieldnames or []]
    if "group" not in reader.fieldnames:
        raise IngestionError("group file lacks a 'group' column", path)
    by_name = {n: j for j, n in enumerate(catalog.class_names)}
    out: dict[int, str] = {}
    for lineno, row in enumerate(reader, start=2):
        if (row.get("class_index") or "").strip():
            try:
                j = int(row["class_index"])
            except ValueError:
                raise IngestionError("class_index must be an integer", path, lineno) from None
        elif (row.get("class_name") or "").strip() in by_name:
            j = by_name[row["class_name"].strip()]
        else:
            raise IngestionError("row names no known class", path, lineno)
        if not 0 <= j < catalog.class_count:
            raise IngestionError(f"class_index {j} out of range", path, lineno)
        g = (row["group"] or "").strip()
        if g not in (RARE, COMMON):
            raise IngestionError(f"group must be 'rare' or 'common', got {g!r}", path, lineno)
        out[j] = g
    missing = [j for j in range(catalog.class_count) if j not in out]
    if missing:
        raise IngestionError(f"no group given for classes {missing}", path)
    return out


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


__all__ = [
    "IngestionError",
    "LabeledSample",
    "ModalityRegistry",
    "PredictionRecord",
    "check_simplex",
    "file_digest",
    "load_catalog",
    "load_group_file",
    "load_predictions",
    "validate_sample",
    "write_catalog",
    "write_predictions",
]
