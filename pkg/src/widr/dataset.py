"""Document manifests and the mixed labeled/unlabeled training stream."""
from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_COLUMNS = ("path", "writer_id", "doc_id", "split", "labeled")
SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class DocumentRecord:
    path: str
    writer_id: str
    doc_id: str
    split: str
    labeled: bool


@dataclass
class Manifest:
    records: list[DocumentRecord]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: DocumentRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def select(self, split: str, labeled: bool | None = None) -> list[DocumentRecord]:
        return [
            r for r in self.records
            if r.split == split and (labeled is None or r.labeled == labeled)
        ]

    def writer_of(self) -> dict[str, str]:
        return {r.doc_id: r.writer_id for r in self.records}


def _validate(records: Sequence[DocumentRecord], lines: Sequence[int]) -> None:
    seen_ids: dict[str, int] = {}
    seen_paths: dict[str, int] = {}
    for rec, line in zip(records, lines):
        if rec.doc_id in seen_ids:
            raise ManifestError(
                f"line {line}: duplicate doc_id {rec.doc_id!r} (first at line {seen_ids[rec.doc_id]})"
            )
        if rec.path in seen_paths:
            raise ManifestError(f"line {line}: duplicate path {rec.path!r}")
        seen_ids[rec.doc_id] = line
        seen_paths[rec.path] = line


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest CSV (``path,writer_id,doc_id,split,labeled``)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records: list[DocumentRecord] = []
    lines: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(f"line 1: header must be {','.join(MANIFEST_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"line {lineno}: expected 5 fields, got {len(row)}")
            p, writer, doc, split, labeled = (cell.strip() for cell in row)
            if not p or not doc:
                raise ManifestError(f"line {lineno}: empty path or doc_id")
            if split not in SPLITS:
                raise ManifestError(f"line {lineno}: unknown split {split!r}")
            if labeled not in ("0", "1"):
                raise ManifestError(f"line {lineno}: labeled must be 0 or 1, got {labeled!r}")
            is_labeled = labeled == "1"
            if not writer and (split == "test" or is_labeled):
                raise ManifestError(f"line {lineno}: writer_id required for {split} labeled={labeled}")
            records.append(DocumentRecord(p, writer, doc, split, is_labeled))
            lines.append(lineno)
    _validate(records, lines)
    return Manifest(records, path.parent)


def write_manifest(path: str | Path, records: Iterable[DocumentRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.path, r.writer_id, r.doc_id, r.split, int(r.labeled)])


@dataclass(frozen=True)
class SampleItem:
    patch_id: str
    class_index: int | None
    z_flag: bool

    def __post_init__(self):
        if self.z_flag != (self.class_index is None):
            raise ValueError("z_flag must be set exactly when class_index is absent")


@dataclass(frozen=True)
class ClassStats:
    counts: dict[int, int]
    n_total: int

    def as_array(self, num_classes: int) -> np.ndarray:
        out = np.zeros(num_classes, dtype=np.int64)
        for k, c in self.counts.items():
            out[k] = c
        return out


def class_stats(labeled_items: Iterable[SampleItem | int], num_classes: int) -> ClassStats:
    """Per-class counts over the labeled set and its size N."""
    counts = {k: 0 for k in range(num_classes)}
    n = 0
    for item in labeled_items:
        k = item.class_index if isinstance(item, SampleItem) else int(item)
        if k is None:
            raise ValueError(f"item {item} has no class")
        if not 0 <= k < num_classes:
            raise ValueError(f"class index {k} outside [0, {num_classes})")
        counts[k] += 1
        n += 1
    return ClassStats(counts, n)


def make_epoch_stream(
    labeled: Sequence[tuple[str, int]],
    extra: Sequence[str],
    seed: int,
) -> list[SampleItem]:
    """Concatenate real and extra samples and shuffle them with a seeded permutation."""
    items = [SampleItem(pid, int(k), False) for pid, k in labeled]
    items += [SampleItem(pid, None, True) for pid in extra]
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in order]


def class_index_map(writer_ids: Iterable[str]) -> dict[str, int]:
    """Map writer ids to contiguous class indices in sorted order."""
    return {w: i for i, w in enumerate(sorted(set(writer_ids)))}
