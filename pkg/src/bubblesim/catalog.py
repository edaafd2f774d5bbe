"""Hierarchical short-video item catalog: loading, validation, fixtures.

Items carry a three-level category path (level 1 coarsest). The catalog
rejects any file in which a category name has more than one parent, since
per-level diversity metrics are meaningless without the tree property.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CatalogError(ValueError):
    """Malformed catalog record, duplicate id, or hierarchy violation."""


CATEGORY_FIELDS = ("category_l1", "category_l2", "category_l3")


@dataclass(frozen=True)
class VideoItem:
    item_id: str
    title: str
    tag: str
    category_l1: str
    category_l2: str
    category_l3: str
    creator_popularity: int

    def __post_init__(self):
        # Category identity is exact string equality after trimming; no case folding.
        for field in CATEGORY_FIELDS:
            value = getattr(self, field).strip()
            object.__setattr__(self, field, value)
            if not value:
                raise CatalogError(f"item {self.item_id!r}: empty {field}")
        if self.creator_popularity < 0:
            raise CatalogError(f"item {self.item_id!r}: negative creator_popularity")

    def category(self, level: int) -> str:
        return getattr(self, f"category_l{level}")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "title": self.title,
            "tag": self.tag,
            "category_l1": self.category_l1,
            "category_l2": self.category_l2,
            "category_l3": self.category_l3,
            "creator_popularity": self.creator_popularity,
        }


@dataclass(frozen=True)
class HierarchyStats:
    unique_counts: tuple[int, int, int]
    avg_children: tuple[float, float]


class CategoryHierarchy:
    """Per-level category name sets plus the child map of the category tree."""

    def __init__(self, items: tuple[VideoItem, ...]):
        names: tuple[set, set, set] = (set(), set(), set())
        children: dict[tuple[int, str], set] = {}
        parent_of: dict[tuple[int, str], str] = {}
        for item in items:
            for level in (1, 2, 3):
                names[level - 1].add(item.category(level))
            for level in (2, 3):
                child, parent = item.category(level), item.category(level - 1)
                seen = parent_of.get((level, child))
                if seen is not None and seen != parent:
                    raise CatalogError(
                        f"hierarchy violation: level-{level} category {child!r} "
                        f"has parents {seen!r} and {parent!r}"
                    )
                parent_of[(level, child)] = parent
                children.setdefault((level - 1, parent), set()).add(child)
        self.names = tuple(frozenset(s) for s in names)
        self.children = {k: frozenset(v) for k, v in children.items()}
        self._parent_of = parent_of

    def level_names(self, level: int) -> frozenset:
        return self.names[level - 1]

    def parent(self, level: int, name: str) -> str:
        return self._parent_of[(level, name)]


class Catalog:
    """Immutable, validated item collection; safe to share across readers."""

    def __init__(self, items: tuple[VideoItem, ...]):
        if not items:
            raise CatalogError("empty catalog")
        by_id: dict[str, VideoItem] = {}
        for item in items:
            if item.item_id in by_id:
                raise CatalogError(f"duplicate item_id {item.item_id!r}")
            by_id[item.item_id] = item
        self.items = items
        self.by_id = by_id
        self.hierarchy = CategoryHierarchy(items)

    def __len__(self) -> int:
        return len(self.items)

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.items == other.items

    def item_ids(self) -> list[str]:
        return [item.item_id for item in self.items]


def _item_from_record(record: dict, line_no: int) -> VideoItem:
    if not isinstance(record, dict):
        raise CatalogError(f"line {line_no}: expected a JSON object")
    missing = [f for f in ("item_id", "title", *CATEGORY_FIELDS, "creator_popularity") if f not in record]
    if missing:
        raise CatalogError(f"line {line_no}: missing fields {missing}")
    popularity = record["creator_popularity"]
    if not isinstance(popularity, int) or isinstance(popularity, bool):
        raise CatalogError(f"line {line_no}: creator_popularity must be an integer")
    try:
        return VideoItem(
            item_id=str(record["item_id"]),
            title=str(record["title"]),
            tag=str(record.get("tag", "") or ""),  # absent tag means untagged, not an error
            category_l1=str(record["category_l1"]),
            category_l2=str(record["category_l2"]),
            category_l3=str(record["category_l3"]),
            creator_popularity=popularity,
        )
    except CatalogError as exc:
        raise CatalogError(f"line {line_no}: {exc}") from None


def load_catalog(path: str | Path, format: str = "jsonl") -> Catalog:
    """Load and validate a catalog file (one JSON object per line)."""
    if format != "jsonl":
        raise CatalogError(f"unsupported catalog format {format!r}")
    path = Path(path)
    items: list[VideoItem] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            items.append(_item_from_record(record, line_no))
    return Catalog(tuple(items))


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for item in catalog.items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False) + "\n")


def hierarchy_stats(catalog: Catalog) -> HierarchyStats:
    """Unique category counts per level and mean child counts for levels 1-2."""
    counts = tuple(len(catalog.hierarchy.level_names(level)) for level in (1, 2, 3))
    return HierarchyStats(
        unique_counts=counts,
        avg_children=(counts[1] / counts[0], counts[2] / counts[1]),
    )


# Name banks for synthetic fixtures; 21 top-level categories matches the scale
# of a real short-video taxonomy.
_L1_NAMES = (
    "sports", "music", "food", "travel", "gaming", "news", "fashion",
    "comedy", "education", "technology", "pets", "dance", "movies",
    "fitness", "art", "autos", "science", "finance", "parenting",
    "beauty", "history",
)
_L2_WORDS = (
    "basics", "trends", "highlights", "stories", "tips", "culture", "gear",
    "skills", "reviews", "vlogs", "live", "local", "global", "classics",
)
_L3_WORDS = (
    "daily", "weekly", "pro", "beginner", "viral", "niche", "retro",
    "fresh", "top", "rare", "fan", "indie", "street", "studio",
)


def _split_even(total: int, parents: list[str]) -> dict[str, int]:
    base, extra = divmod(total, len(parents))
    return {name: base + (1 if i < extra else 0) for i, name in enumerate(parents)}


def _child_names(parents: list[str], total: int, words: tuple[str, ...]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for parent, count in _split_even(total, parents).items():
        names = []
        for j in range(count):
            word = words[j] if j < len(words) else f"sub{j + 1}"
            names.append(f"{parent} {word}")
        out[parent] = names
    return out


def generate_fixture(
    seed: int, n_items: int, shape: tuple[float, float, float] = (21, 2.62, 4.22)
) -> Catalog:
    """Deterministic synthetic catalog with a tree hierarchy shaped by
    (level-1 count, avg children per level-1, avg children per level-2)."""
    if n_items <= 0:
        raise CatalogError("n_items must be positive")
    if len(shape) != 3 or any(s <= 0 for s in shape):
        raise CatalogError(f"branching shape must be three positive numbers, got {shape!r}")
    n1 = int(round(shape[0]))
    n2 = max(n1, int(round(n1 * shape[1])))
    n3 = max(n2, int(round(n2 * shape[2])))

    l1 = [_L1_NAMES[i] if i < len(_L1_NAMES) else f"topic{i + 1}" for i in range(n1)]
    l2_by_l1 = _child_names(l1, n2, _L2_WORDS)
    l2 = [name for parent in l1 for name in l2_by_l1[parent]]
    l3_by_l2 = _child_names(l2, n3, _L3_WORDS)

    # leaf -> full path
    paths = [
        (c1, c2, c3)
        for c1 in l1
        for c2 in l2_by_l1[c1]
        for c3 in l3_by_l2[c2]
    ]
    rng = np.random.default_rng(seed)
    items = []
    for seq in range(n_items):
        c1, c2, c3 = paths[int(rng.integers(len(paths)))]
        popularity = int(rng.lognormal(mean=8.0, sigma=1.5))
        items.append(
            VideoItem(
                item_id=f"v{seq:06d}",
                title=f"{c3} clip {seq + 1}",
                tag="#" + c3.replace(" ", ""),
                category_l1=c1,
                category_l2=c2,
                category_l3=c3,
                creator_popularity=popularity,
            )
        )
    return Catalog(tuple(items))


def summarize_item(item: VideoItem) -> str:
    """Text block shown to agents in place of the video itself."""
    return (
        f"Title: {item.title}\n"
        f"Tag: {item.tag}\n"
        f"Category level 1: {item.category_l1}\n"
        f"Category level 2: {item.category_l2}\n"
        f"Category level 3: {item.category_l3}\n"
        f"Creator popularity: {item.creator_popularity} followers"
    )
