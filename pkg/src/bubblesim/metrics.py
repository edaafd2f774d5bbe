"""Coverage, entropy, satisfaction, bubble classification, and ECDFs.

Everything here is a pure function of the run log, so metrics recomputed
from persisted records reproduce the in-run values bit-exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import statistics
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .catalog import Catalog
from .personas import UserProfile

logger = logging.getLogger(__name__)

LEVELS = (1, 2, 3)
WINDOW_MODES = ("per_iteration", "cumulative")
WATCH_MODES = ("positive", "shown")  # what counts as "watched" for diversity

METRICS_COLUMNS = ("iteration", "user_id", "level", "coverage", "entropy", "satisfaction", "bubble_status")
SUMMARY_COLUMNS = ("iteration", "level", "mean_entropy", "mean_satisfaction", "bubble_proportion")


class MetricsError(ValueError):
    pass


def coverage(n_seen: int, n_total: int) -> float:
    """Fraction of available categories at a level that were watched."""
    if n_total <= 0:
        raise MetricsError("total category count must be positive")
    if not 0 <= n_seen <= n_total:
        raise MetricsError(f"seen count {n_seen} outside [0, {n_total}]")
    return n_seen / n_total


def entropy(counts) -> float:
    """Shannon entropy (nats) of a category count map; empty counts give 0."""
    total = sum(counts.values())
    if total == 0:
        return 0.0
    result = 0.0
    for count in counts.values():
        if count < 0:
            raise MetricsError("category counts must be non-negative")
        if count:
            p = count / total
            result -= p * math.log(p)
    return result


def satisfaction(records) -> float:
    """Fraction of shown videos that received a positive feedback type."""
    if not records:
        raise MetricsError("empty record list")
    positive = sum(1 for r in records if r.feedback.is_positive)
    return positive / len(records)


def bubble_status(counts_by_user) -> dict:
    """'in' iff the user's distinct-category count is strictly below the
    median across users (midpoint convention for even counts)."""
    if not counts_by_user:
        raise MetricsError("need at least one user")
    median = statistics.median(counts_by_user.values())
    return {
        user: "in" if count < median else "out"
        for user, count in counts_by_user.items()
    }


def bubble_proportion(statuses) -> float:
    if not statuses:
        raise MetricsError("empty status map")
    inside = sum(1 for s in statuses.values() if s == "in")
    return inside / len(statuses)


def demographic_ecdf(values, groups) -> dict:
    """Right-continuous ECDF points per demographic group.

    values: user -> diversity value; groups: user -> group label. Users
    missing from either map violate the contract; empty groups are omitted
    with a log line.
    """
    missing = [u for u in values if u not in groups]
    if missing:
        raise MetricsError(f"users without a grouping feature: {missing[:5]}")
    members: dict = {}
    for user, group in groups.items():
        if user in values:
            members.setdefault(group, []).append(values[user])
    out = {}
    for group in sorted(set(groups.values()), key=str):
        vals = sorted(members.get(group, []))
        if not vals:
            logger.warning("ECDF group %r has no members with values; omitted", group)
            continue
        n = len(vals)
        points = [
            (vals[j], (j + 1) / n)
            for j in range(n)
            if j + 1 == n or vals[j + 1] != vals[j]
        ]
        out[group] = points
    return out


AGE_BANDS = ((16, 25), (26, 35), (36, 45), (46, 60))


def profile_group(profile: UserProfile, feature: str) -> str:
    """Grouping label for the demographic ECDF analysis."""
    if feature == "gender":
        return profile.gender
    if feature == "city_level":
        return str(profile.city_level)
    if feature == "phone_price":
        return profile.phone_price
    if feature == "age":
        for lo, hi in AGE_BANDS:
            if lo <= profile.age <= hi:
                return f"{lo}-{hi}"
        return f">{AGE_BANDS[-1][1]}"
    raise MetricsError(f"unknown demographic feature {feature!r}")


# --- per-iteration metric rows -------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    user_id: str
    level: int
    coverage: float
    entropy: float
    satisfaction: float
    bubble_status: str


@dataclass(frozen=True)
class SummaryRow:
    iteration: int
    level: int
    mean_entropy: float
    mean_satisfaction: float
    bubble_proportion: float


def compute_metrics(
    records,
    users,
    catalog: Catalog,
    window: str = "per_iteration",
    watch: str = "positive",
) -> tuple[list[MetricsRow], list[SummaryRow]]:
    """Per (iteration, user, level) metric rows plus per-level summaries.

    watch="positive" counts only positively-responded videos as watched;
    watch="shown" counts every presented video. window="cumulative" pools
    all records up to each iteration for the diversity measures.
    """
    if window not in WINDOW_MODES:
        raise MetricsError(f"unknown window mode {window!r}")
    if watch not in WATCH_MODES:
        raise MetricsError(f"unknown watch mode {watch!r}")
    if not records:
        raise MetricsError("no feedback records")
    totals = {level: len(catalog.hierarchy.level_names(level)) for level in LEVELS}
    by_iter_user: dict = {}
    for record in records:
        by_iter_user.setdefault((record.iteration, record.user_id), []).append(record)
    iterations = sorted({r.iteration for r in records})

    def watched_items(user: str, iteration: int) -> list:
        if window == "cumulative":
            pool = [
                r
                for (i, u), recs in by_iter_user.items()
                if u == user and i <= iteration
                for r in recs
            ]
        else:
            pool = by_iter_user.get((iteration, user), [])
        if watch == "positive":
            pool = [r for r in pool if r.feedback.is_positive]
        return [catalog.by_id[r.item_id] for r in pool]

    rows: list[MetricsRow] = []
    summaries: list[SummaryRow] = []
    for iteration in iterations:
        per_user: dict = {}
        for user in users:
            recs = by_iter_user.get((iteration, user), [])
            if not recs:
                raise MetricsError(f"no records for user {user!r} at iteration {iteration}")
            items = watched_items(user, iteration)
            per_level = {}
            for level in LEVELS:
                counts = Counter(item.category(level) for item in items)
                per_level[level] = {
                    "coverage": coverage(len(counts), totals[level]),
                    "entropy": entropy(counts),
                    "distinct": len(counts),
                }
            per_user[user] = {"satisfaction": satisfaction(recs), "levels": per_level}
        for level in LEVELS:
            statuses = bubble_status(
                {user: per_user[user]["levels"][level]["distinct"] for user in users}
            )
            for user in users:
                stats = per_user[user]["levels"][level]
                rows.append(
                    MetricsRow(
                        iteration=iteration,
                        user_id=user,
                        level=level,
                        coverage=stats["coverage"],
                        entropy=stats["entropy"],
                        satisfaction=per_user[user]["satisfaction"],
                        bubble_status=statuses[user],
                    )
                )
            summaries.append(
                SummaryRow(
                    iteration=iteration,
                    level=level,
                    mean_entropy=sum(per_user[u]["levels"][level]["entropy"] for u in users) / len(users),
                    mean_satisfaction=sum(per_user[u]["satisfaction"] for u in users) / len(users),
                    bubble_proportion=bubble_proportion(statuses),
                )
            )
    return rows, summaries


# --- CSV emission ----------------------------------------------------------------


def write_metrics_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.iteration, row.user_id, row.level, row.coverage,
                 row.entropy, row.satisfaction, row.bubble_status]
            )


def write_summary_csv(rows, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.iteration, row.level, row.mean_entropy,
                 row.mean_satisfaction, row.bubble_proportion]
            )


def read_summary_csv(path: str | Path) -> list[SummaryRow]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            SummaryRow(
                iteration=int(row["iteration"]),
                level=int(row["level"]),
                mean_entropy=float(row["mean_entropy"]),
                mean_satisfaction=float(row["mean_satisfaction"]),
                bubble_proportion=float(row["bubble_proportion"]),
            )
            for row in reader
        ]
