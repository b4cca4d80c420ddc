"""Record cleaning, race x gender undersampling, stratified splits and dataset files.

Randomness comes from numpy's PCG64 bit generator seeded with the user's seed,
which produces the same stream on every platform.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from namerace.encoding import encode_names, input_length
from namerace.nncore import CLASS_NAMES

GENDERS: tuple[str, ...] = ("female", "male")
CELLS: tuple[tuple[str, str], ...] = tuple((r, g) for r in CLASS_NAMES for g in GENDERS)
_GENDER_ALIASES = {"f": "female", "female": "female", "m": "male", "male": "male"}


class EmptyCellError(ValueError):
    pass


@dataclass(frozen=True)
class NameRecord:
    first: str
    last: str
    race: str
    gender: str

    @property
    def cell(self) -> tuple[str, str]:
        return (self.race, self.gender)


@dataclass
class BalancedDataset:
    records: list[NameRecord]
    group_size: int
    seed: int
    counts_before: dict[tuple[str, str], int] = field(default_factory=dict)


@dataclass
class DropReport:
    kept: int
    dropped: int
    by_label: dict[str, int]


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def cell_counts(records) -> dict[tuple[str, str], int]:
    c = Counter(r.cell for r in records)
    return {cell: c.get(cell, 0) for cell in CELLS}


def drop_excluded(rows) -> tuple[list[NameRecord], DropReport]:
    """Keep rows whose race is one of the four classes and whose gender is known.

    ``rows`` holds mappings with keys first, last, race, gender (raw strings).
    Dropped rows are tallied by their raw race label (or ``gender:<label>``).
    """
    kept, dropped = [], Counter()
    for row in rows:
        race = (row.get("race") or "").strip().lower()
        gender = _GENDER_ALIASES.get((row.get("gender") or "").strip().lower())
        if race not in CLASS_NAMES:
            dropped[race or "<missing>"] += 1
            continue
        if gender is None:
            dropped["gender:" + ((row.get("gender") or "").strip() or "<missing>")] += 1
            continue
        kept.append(NameRecord(row.get("first") or "", row.get("last") or "", race, gender))
    return kept, DropReport(len(kept), sum(dropped.values()), dict(sorted(dropped.items())))


def undersample(records: list[NameRecord], seed: int) -> BalancedDataset:
    """Sample every race x gender cell without replacement down to the smallest cell.

    Selected rows keep their original relative order.
    """
    by_cell: dict[tuple[str, str], list[int]] = {cell: [] for cell in CELLS}
    for i, r in enumerate(records):
        by_cell[r.cell].append(i)
    for cell, idx in by_cell.items():
        if not idx:
            raise EmptyCellError(f"no records for race={cell[0]} gender={cell[1]}")
    k = min(len(idx) for idx in by_cell.values())
    rng = rng_for(seed)
    chosen = []
    for cell in CELLS:
        idx = by_cell[cell]
        pick = rng.choice(len(idx), size=k, replace=False)
        chosen.extend(idx[j] for j in pick)
    chosen.sort()
    return BalancedDataset([records[i] for i in chosen], k, seed, {c: len(v) for c, v in by_cell.items()})


def _allocate(sizes: list[int], fraction: float) -> list[int]:
    # largest-remainder rounding so the total test size is round(fraction * N)
    exact = [s * fraction for s in sizes]
    base = [int(np.floor(e)) for e in exact]
    total = int(round(sum(sizes) * fraction))
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[: max(0, total - sum(base))]:
        base[i] += 1
    return base


def split(records: list[NameRecord], test_fraction: float = 0.2, seed: int = 0):
    """Stratified train/test partition; each race x gender cell is split at ``test_fraction``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_cell: dict[tuple[str, str], list[int]] = {}
    for i, r in enumerate(records):
        by_cell.setdefault(r.cell, []).append(i)
    cells = [c for c in CELLS if c in by_cell]
    n_test = _allocate([len(by_cell[c]) for c in cells], test_fraction)
    rng = rng_for(seed)
    test_idx = []
    for cell, k in zip(cells, n_test):
        idx = by_cell[cell]
        if k == 0 or k == len(idx):
            raise ValueError(f"test_fraction {test_fraction} leaves one side of cell {cell} empty")
        perm = rng.permutation(len(idx))
        test_idx.extend(idx[j] for j in perm[:k])
    in_test = set(test_idx)
    train = [r for i, r in enumerate(records) if i not in in_test]
    test = [r for i, r in enumerate(records) if i in in_test]
    return train, test


def is_missing(value) -> bool:
    return value is None or str(value).strip() in ("", "NA")


def encode_dataset(records: list[NameRecord], mode: str) -> tuple[np.ndarray, np.ndarray]:
    """(X, y) with X of shape (n, 10|20); rows missing a required component are dropped."""
    keep = [r for r in records if not is_missing(r.last) and (mode == "lastname" or not is_missing(r.first))]
    X = encode_names([r.last for r in keep], [r.first for r in keep], mode)
    y = np.array([CLASS_NAMES.index(r.race) for r in keep], dtype=np.int64)
    return X.reshape(len(keep), input_length(mode)), y


def read_records_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"first", "last", "race", "gender"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return list(reader)


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["first", "last", "race", "gender"])
        for r in records:
            w.writerow([r.first, r.last, r.race, r.gender])


def write_encoded_csv(X: np.ndarray, y: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X.tolist(), y.tolist()):
            w.writerow(row + [label])


def read_encoded_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return data[:, :-1], data[:, -1]


def prepare(rows, out_dir, mode: str = "lastname", test_fraction: float = 0.2, seed: int = 0) -> dict:
    """Full prep: drop, undersample, split, encode; writes train.csv, test.csv, manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, report = drop_excluded(rows)
    balanced = undersample(records, seed)
    train, test = split(balanced.records, test_fraction, seed)
    Xtr, ytr = encode_dataset(train, mode)
    Xte, yte = encode_dataset(test, mode)
    write_encoded_csv(Xtr, ytr, out_dir / "train.csv")
    write_encoded_csv(Xte, yte, out_dir / "test.csv")
    after = cell_counts(balanced.records)
    manifest = {
        "seed": seed,
        "mode": mode,
        "input_length": input_length(mode),
        "test_fraction": test_fraction,
        "rng": "numpy PCG64",
        "rows_read": len(rows),
        "dropped": report.dropped,
        "dropped_by_label": report.by_label,
        "group_size": balanced.group_size,
        "cells": [
            {"race": r, "gender": g, "count_before": balanced.counts_before[(r, g)], "count_after": after[(r, g)]}
            for r, g in CELLS
        ],
        "train_rows": int(len(ytr)),
        "test_rows": int(len(yte)),
        "encoded_dropped_missing": len(balanced.records) - int(len(ytr) + len(yte)),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


# toy corpus: class k names end in one of three class bigrams (p=0.9) or start with one
# of them otherwise; body letters avoid the marker letters so the class is always recoverable.
TOY_MARKERS: dict[str, tuple[str, ...]] = {
    "asian": ("ng", "ao", "ui"),
    "black": ("wx", "oy", "qu"),
    "hispanic": ("ez", "io", "zq"),
    "white": ("th", "yw", "tx"),
}
_MARKER_LETTERS = set("".join("".join(v) for v in TOY_MARKERS.values()))
TOY_BODY = "".join(ch for ch in "abcdefghijklmnopqrstuvwxyz" if ch not in _MARKER_LETTERS)


def toy_corpus(seed: int = 0, per_class: int = 1000, majority_share: float = 0.75) -> list[NameRecord]:
    """Synthetic labeled names with a 3:1 gender imbalance inside every class.

    Last names are 4-8 characters. The majority gender alternates by class so both
    genders end up as the limiting cell somewhere.
    """
    rng = rng_for(seed)
    out = []
    for k, race in enumerate(CLASS_NAMES):
        n_major = int(round(per_class * majority_share))
        major, minor = (GENDERS[k % 2], GENDERS[1 - k % 2])
        genders = [major] * n_major + [minor] * (per_class - n_major)
        for gender in genders:
            length = int(rng.integers(4, 9))
            body = "".join(rng.choice(list(TOY_BODY), size=length - 2))
            marker = TOY_MARKERS[race][int(rng.integers(3))]
            last = body + marker if rng.random() < 0.9 else marker + body
            first_len = int(rng.integers(3, 9))
            first = "".join(rng.choice(list(TOY_BODY), size=first_len))
            out.append(NameRecord(first.capitalize(), last.capitalize(), race, gender))
    return out
