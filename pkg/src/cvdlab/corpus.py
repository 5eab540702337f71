"""Dataset ingestion, deterministic splitting, and class balancing.

The canonical on-disk form is JSON lines, one sample per line. Ingestion
also reads delimited tables (the common function/label CSV layout) through
a role -> column map, so published corpora can be pulled in without
reshaping them first.
"""

from __future__ import annotations

import csv
import json
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

SPLIT_NAMES = ("train", "valid", "test")
DEFAULT_RATIOS = (0.90, 0.05, 0.05)

# Vulnerable functions can be very large; the csv module's default field
# cap (128 KiB) is too small for real corpora.
csv.field_size_limit(sys.maxsize)


@dataclass(frozen=True)
class CodeSample:
    """One labeled source-code function."""

    id: str
    code: str
    label: int  # 1 = vulnerable, 0 = safe
    cwe: str | None = None  # weakness category, when known
    origin: str | None = None  # source dataset name

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.id:
            raise ValueError("sample id must be non-empty")

    def to_dict(self) -> dict:
        d = {"id": self.id, "code": self.code, "label": self.label}
        if self.cwe is not None:
            d["cwe"] = self.cwe
        if self.origin is not None:
            d["origin"] = self.origin
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CodeSample":
        return cls(
            id=str(d["id"]),
            code=d["code"],
            label=int(d["label"]),
            cwe=d.get("cwe"),
            origin=d.get("origin"),
        )


@dataclass
class IngestResult:
    """Accepted samples plus bookkeeping from one ingestion pass."""

    samples: list[CodeSample]
    skipped: int  # rows dropped for empty code or unusable label
    split_assignments: dict[str, str] = field(default_factory=dict)


@dataclass
class DatasetSplit:
    """A train/valid/test partition of one sample collection."""

    train: list[CodeSample]
    valid: list[CodeSample]
    test: list[CodeSample]
    seed: int | None = None
    ratios: tuple[float, float, float] | None = None
    assigned: bool = False  # True when the split came from a source column

    def parts(self) -> list[tuple[str, list[CodeSample]]]:
        return [("train", self.train), ("valid", self.valid), ("test", self.test)]

    def counts(self) -> dict[str, int]:
        return {name: len(part) for name, part in self.parts()}


def _coerce_label(value) -> int | None:
    """Map a raw label cell to 0/1, or None when it cannot be trusted."""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value if value in (0, 1) else None
    if isinstance(value, float):
        return int(value) if value in (0.0, 1.0) else None
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("0", "1"):
            return int(text)
        if text in ("true", "false"):
            return int(text == "true")
    return None


_SPLIT_SYNONYMS = {
    "train": "train",
    "valid": "valid",
    "validation": "valid",
    "dev": "valid",
    "test": "test",
}


def ingest(
    path: str | Path,
    format: str = "csv",
    column_map: Mapping[str, str] | None = None,
    delimiter: str = ",",
    origin: str | None = None,
) -> IngestResult:
    """Read a corpus file into CodeSamples.

    Args:
        path: source file.
        format: "csv" (delimited table with header) or "jsonl".
        column_map: role -> source column. Roles "code" and "label" are
            mandatory; "id", "cwe" and "split" are optional. Defaults to
            identity names, picking up optional columns when present.
        delimiter: field separator for the csv format.
        origin: dataset name stamped on every sample.

    Returns:
        IngestResult with accepted samples, the skip count, and any
        pre-assigned split labels found under the "split" role.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    if format == "csv":
        rows, columns = _read_csv(path, delimiter)
    elif format == "jsonl":
        rows, columns = _read_jsonl(path)
    else:
        raise ValueError(f"unknown corpus format {format!r} (expected csv or jsonl)")

    cmap = dict(column_map) if column_map else {}
    for role in ("code", "label"):
        cmap.setdefault(role, role)
    for role in ("id", "cwe", "split"):
        # opportunistic: map same-named optional columns when they exist
        if role not in cmap and role in columns:
            cmap[role] = role
    cmap = {role: col for role, col in cmap.items() if col}

    for role in ("code", "label"):
        if cmap[role] not in columns:
            raise ValueError(
                f"mandatory column {cmap[role]!r} (role {role!r}) missing from {path.name}; "
                f"available: {sorted(columns)}"
            )
    for role in ("id", "cwe", "split"):
        if role in cmap and cmap[role] not in columns:
            raise ValueError(f"mapped column {cmap[role]!r} (role {role!r}) missing from {path.name}")

    samples: list[CodeSample] = []
    assignments: dict[str, str] = {}
    seen_ids: set[str] = set()
    skipped = 0
    for row_index, row in enumerate(rows):
        code = row.get(cmap["code"])
        label = _coerce_label(row.get(cmap["label"]))
        if not isinstance(code, str) or not code.strip() or label is None:
            skipped += 1
            continue
        if "id" in cmap:
            sample_id = str(row.get(cmap["id"], "")).strip()
            if not sample_id:
                skipped += 1
                continue
        else:
            sample_id = f"r{row_index:06d}"
        if sample_id in seen_ids:
            raise ValueError(f"duplicate sample id {sample_id!r} in {path.name}")
        seen_ids.add(sample_id)
        cwe = None
        if "cwe" in cmap:
            raw = row.get(cmap["cwe"])
            if raw is not None and str(raw).strip():
                cwe = str(raw).strip()
        samples.append(CodeSample(id=sample_id, code=code, label=label, cwe=cwe, origin=origin))
        if "split" in cmap:
            raw = str(row.get(cmap["split"], "")).strip().lower()
            if raw not in _SPLIT_SYNONYMS:
                raise ValueError(f"unrecognized split value {raw!r} for sample {sample_id!r}")
            assignments[sample_id] = _SPLIT_SYNONYMS[raw]

    if not samples:
        raise ValueError(f"no usable rows in {path.name} ({skipped} skipped)")
    return IngestResult(samples=samples, skipped=skipped, split_assignments=assignments)


def _read_csv(path: Path, delimiter: str) -> tuple[list[dict], set[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise ValueError(f"{path.name} has no header row")
        return list(reader), set(reader.fieldnames)


def _read_jsonl(path: Path) -> tuple[list[dict], set[str]]:
    rows = []
    columns: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            rows.append(row)
            columns.update(row.keys())
    return rows, columns


def split(
    samples: Sequence[CodeSample],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    assigned: Mapping[str, str] | None = None,
) -> DatasetSplit:
    """Partition samples into train/valid/test.

    With ratios, valid and test get floor(N * ratio) samples each and train
    takes the remainder, after a seed-determined shuffle. With `assigned`,
    the given id -> part mapping is applied verbatim and ratios are ignored.
    """
    if assigned is not None:
        parts: dict[str, list[CodeSample]] = {name: [] for name in SPLIT_NAMES}
        for sample in samples:
            part = assigned.get(sample.id)
            if part not in SPLIT_NAMES:
                raise ValueError(f"sample {sample.id!r} has no valid split assignment")
            parts[part].append(sample)
        return DatasetSplit(parts["train"], parts["valid"], parts["test"], seed=None, ratios=None, assigned=True)

    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples to split, got {len(samples)}")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive values summing to 1, got {ratios}")

    shuffled = list(samples)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_valid = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_valid - n_test  # remainder goes to train
    train = shuffled[:n_train]
    valid = shuffled[n_train : n_train + n_valid]
    test = shuffled[n_train + n_valid :]
    return DatasetSplit(train, valid, test, seed=seed, ratios=tuple(ratios))


def balance_undersample(samples: Sequence[CodeSample], seed: int = 0) -> list[CodeSample]:
    """Equalize class counts by randomly dropping majority-class samples.

    The minority class is kept intact, input order is preserved, and the
    result is always a subset of the input. Already-balanced input comes
    back unchanged.
    """
    by_label: dict[int, list[int]] = {0: [], 1: []}
    for i, sample in enumerate(samples):
        by_label[sample.label].append(i)
    if not by_label[0] or not by_label[1]:
        raise ValueError("cannot balance a single-class collection")
    n0, n1 = len(by_label[0]), len(by_label[1])
    if n0 == n1:
        return list(samples)
    majority = by_label[0] if n0 > n1 else by_label[1]
    keep = set(random.Random(seed).sample(majority, min(n0, n1)))
    majority_set = set(majority)
    return [s for i, s in enumerate(samples) if i not in majority_set or i in keep]


def save_jsonl(samples: Iterable[CodeSample], path: str | Path) -> None:
    """Write samples as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_dict(), sort_keys=True) + "\n")


def load_jsonl(path: str | Path) -> list[CodeSample]:
    """Read samples from JSON lines."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sample file not found: {path}")
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                samples.append(CodeSample.from_dict(json.loads(line)))
    return samples


def write_split_manifest(dataset_split: DatasetSplit, path: str | Path) -> None:
    """Record the split membership (ids per part) plus seed and ratios."""
    manifest = {
        "seed": dataset_split.seed,
        "ratios": list(dataset_split.ratios) if dataset_split.ratios else None,
        "assigned": dataset_split.assigned,
        "counts": dataset_split.counts(),
        "ids": {name: [s.id for s in part] for name, part in dataset_split.parts()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split_manifest(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
