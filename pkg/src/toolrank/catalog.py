"""Item catalog, user behavior sequences and the chronological split."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised for malformed input files."""


@dataclass(frozen=True)
class SplitConfig:
    k: int = 1
    c: int = 10
    k_prime: int = 20
    k_cpr: int = 10

    def __post_init__(self):
        for name in ("k", "c", "k_prime", "k_cpr"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.k_cpr > self.k_prime:
            raise ValueError(f"k_cpr ({self.k_cpr}) must not exceed k_prime ({self.k_prime})")

    @property
    def min_length(self) -> int:
        return self.k + self.c


@dataclass(frozen=True)
class Catalog:
    """Dense-indexed item universe. Item ``i`` has ``descriptions[i]`` and ``external_keys[i]``."""

    descriptions: tuple[str, ...]
    external_keys: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        object.__setattr__(self, "external_keys", tuple(self.external_keys))
        if len(self.descriptions) != len(self.external_keys):
            raise ValueError("descriptions and external_keys differ in length")
        if any(not d.strip() for d in self.descriptions):
            raise ValueError("catalog items need a non-empty description")
        index = {key: i for i, key in enumerate(self.external_keys)}
        if len(index) != len(self.external_keys):
            raise ValueError("external keys must be unique")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.descriptions)

    def desc(self, items: Sequence[int]) -> list[str]:
        return [self.descriptions[i] for i in items]

    def key(self, item: int) -> str:
        return self.external_keys[item]

    def lookup(self, key: str) -> int | None:
        return self._index.get(key)


@dataclass(frozen=True)
class BehaviorSequence:
    user: int
    items: tuple[int, ...]
    timestamps: tuple[int, ...]
    user_key: str = ""

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        object.__setattr__(self, "timestamps", tuple(int(t) for t in self.timestamps))
        if len(self.items) != len(self.timestamps):
            raise ValueError("items and timestamps differ in length")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError(f"timestamps of user {self.user} are not chronological")
        if not self.user_key:
            object.__setattr__(self, "user_key", str(self.user))

    def __len__(self) -> int:
        return len(self.items)


class Dataset(NamedTuple):
    catalog: Catalog
    sequences: list[BehaviorSequence]
    duplicates_dropped: int = 0


class SplitViews(NamedTuple):
    train: list[int]
    window: list[int]
    target: list[int]


def split_views(seq: BehaviorSequence | Sequence[int], split: SplitConfig) -> SplitViews:
    """Return ``(s[:-k], s[-(k+c):-k], s[-k:])``."""
    items = list(seq.items if isinstance(seq, BehaviorSequence) else seq)
    if len(items) < split.min_length:
        raise ValueError(f"sequence of length {len(items)} is shorter than k+c={split.min_length}")
    k, c = split.k, split.c
    return SplitViews(items[:-k], items[-(k + c):-k], items[-k:])


def _sniff_rows(path: Path, delimiter: str, header: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestError(f"{path}:1: empty file, expected header {','.join(header)}") from None
        if tuple(col.strip() for col in first) != header:
            raise IngestError(f"{path}:1: expected header {','.join(header)}, got {first!r}")
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            yield reader.line_num, row


def ingest(
    interactions_path: str | Path,
    items_path: str | Path,
    split: SplitConfig = SplitConfig(),
    delimiter: str = ",",
    min_interactions: int = 0,
) -> Dataset:
    """Load the item and interaction files into a catalog and per-user sequences.

    Items without a title are dropped together with their interactions. Users
    left with fewer than ``max(k + c, min_interactions)`` interactions are
    dropped. Dense ids follow the lexicographic order of the external keys.
    """
    if delimiter not in (",", "\t"):
        raise ValueError("delimiter must be ',' or tab")
    interactions_path, items_path = Path(interactions_path), Path(items_path)

    titles: dict[str, str] = {}
    for line, row in _sniff_rows(items_path, delimiter, ("item_id", "title")):
        if len(row) != 2:
            raise IngestError(f"{items_path}:{line}: expected 2 fields, got {len(row)}")
        key, title = row[0].strip(), row[1].strip()
        if not key:
            raise IngestError(f"{items_path}:{line}: empty item_id")
        if key in titles:
            raise IngestError(f"{items_path}:{line}: duplicate item_id {key!r}")
        titles[key] = title
    kept_keys = sorted(k for k, t in titles.items() if t)

    seen: set[tuple[str, str, int]] = set()
    by_user: dict[str, list[tuple[int, str]]] = {}
    duplicates = 0
    for line, row in _sniff_rows(interactions_path, delimiter, ("user_id", "item_id", "timestamp")):
        if len(row) != 3:
            raise IngestError(f"{interactions_path}:{line}: expected 3 fields, got {len(row)}")
        user, item, ts = (cell.strip() for cell in row)
        if not user or not item:
            raise IngestError(f"{interactions_path}:{line}: empty user_id or item_id")
        try:
            ts = int(ts)
        except ValueError:
            raise IngestError(f"{interactions_path}:{line}: timestamp {ts!r} is not an integer") from None
        triple = (user, item, ts)
        if triple in seen:
            duplicates += 1
            continue
        seen.add(triple)
        if item not in titles:
            raise IngestError(f"{interactions_path}:{line}: unknown item_id {item!r}")
        if titles[item]:
            by_user.setdefault(user, []).append((ts, item))
    if duplicates:
        logger.info("dropped %d duplicate interactions from %s", duplicates, interactions_path)

    catalog = Catalog([titles[k] for k in kept_keys], kept_keys)
    min_len = max(split.min_length, min_interactions)
    sequences = []
    for user_key in sorted(k for k, events in by_user.items() if len(events) >= min_len):
        # stable sort keeps file order among equal timestamps
        events = sorted(by_user[user_key], key=lambda e: e[0])
        sequences.append(
            BehaviorSequence(
                user=len(sequences),
                items=[catalog.lookup(item) for _, item in events],
                timestamps=[ts for ts, _ in events],
                user_key=user_key,
            )
        )
    return Dataset(catalog, sequences, duplicates)


def write_dataset(
    catalog: Catalog,
    sequences: Sequence[BehaviorSequence],
    interactions_path: str | Path,
    items_path: str | Path,
    delimiter: str = ",",
) -> None:
    with open(items_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["item_id", "title"])
        for key, title in zip(catalog.external_keys, catalog.descriptions):
            writer.writerow([key, title])
    with open(interactions_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "timestamp"])
        for seq in sequences:
            for item, ts in zip(seq.items, seq.timestamps):
                writer.writerow([seq.user_key, catalog.key(item), ts])
