"""Mean Average Precision and recall curves under the revisited protocol.

Each query carries easy-positive, hard-positive, and junk sets.  The
medium protocol counts easy+hard as positive and ignores junk; the hard
protocol counts only hard positives and ignores junk+easy.  Ignored items
are removed from the ranking before AP is computed as the mean, over
positives, of precision at each positive's (filtered) rank.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import OverlappingGtSets

PROTOCOLS = ("medium", "hard")


@dataclass(frozen=True)
class QueryGroundTruth:
    """Easy/hard/junk item sets for one query; pairwise disjoint."""

    easy: frozenset
    hard: frozenset
    junk: frozenset

    def __post_init__(self):
        object.__setattr__(self, "easy", frozenset(self.easy))
        object.__setattr__(self, "hard", frozenset(self.hard))
        object.__setattr__(self, "junk", frozenset(self.junk))
        if self.easy & self.hard or self.easy & self.junk or self.hard & self.junk:
            raise OverlappingGtSets("easy/hard/junk sets must be pairwise disjoint")

    def positives(self, protocol: str) -> frozenset:
        _check_protocol(protocol)
        return self.easy | self.hard if protocol == "medium" else self.hard

    def ignored(self, protocol: str) -> frozenset:
        _check_protocol(protocol)
        return self.junk if protocol == "medium" else self.junk | self.easy


class GroundTruth:
    """Per-query ground truth keyed by query id."""

    def __init__(self, queries: Mapping[str, QueryGroundTruth]):
        self._queries = dict(queries)

    def __len__(self) -> int:
        return len(self._queries)

    def __getitem__(self, query_id: str) -> QueryGroundTruth:
        return self._queries[query_id]

    def __contains__(self, query_id: str) -> bool:
        return query_id in self._queries

    @property
    def query_ids(self) -> list[str]:
        return list(self._queries)

    def items(self):
        return self._queries.items()

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "GroundTruth":
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        queries = {}
        for entry in payload["queries"]:
            queries[entry["id"]] = QueryGroundTruth(
                easy=frozenset(entry.get("easy", [])),
                hard=frozenset(entry.get("hard", [])),
                junk=frozenset(entry.get("junk", [])),
            )
        return cls(queries)

    def to_json(self, path: str | os.PathLike) -> None:
        payload = {
            "queries": [
                {
                    "id": qid,
                    "easy": sorted(gt.easy),
                    "hard": sorted(gt.hard),
                    "junk": sorted(gt.junk),
                }
                for qid, gt in self._queries.items()
            ]
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


def _check_protocol(protocol: str) -> None:
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")


def average_precision(
    ranking: Sequence[Hashable], gt: QueryGroundTruth, protocol: str
) -> float | None:
    """AP of one ranking, or None when the query has no positives.

    Positives absent from the ranking contribute zero precision.
    """
    positives = gt.positives(protocol)
    if not positives:
        return None
    ignored = gt.ignored(protocol)
    hits = 0
    rank = 0
    total = 0.0
    for item in ranking:
        if item in ignored:
            continue
        rank += 1
        if item in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def mean_ap(
    rankings: Mapping[str, Sequence[Hashable]], gt: GroundTruth, protocol: str
) -> float:
    """Mean AP x100 at one decimal; zero-positive queries are excluded."""
    aps = []
    for qid, ranking in rankings.items():
        ap = average_precision(ranking, gt[qid], protocol)
        if ap is not None:
            aps.append(ap)
    if not aps:
        raise ValueError("no query with positives under this protocol")
    return round(100.0 * sum(aps) / len(aps), 1)


def per_query_ap(
    rankings: Mapping[str, Sequence[Hashable]], gt: GroundTruth, protocol: str
) -> dict[str, float | None]:
    return {
        qid: average_precision(ranking, gt[qid], protocol)
        for qid, ranking in rankings.items()
    }


def recall_curve(
    rankings: Mapping[str, Sequence[Hashable]],
    gt: GroundTruth,
    protocol: str,
    k_max: int,
) -> list[tuple[int, int]]:
    """Total positives retrieved in the top K, junk-filtered, K=1..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    counts = [0] * k_max
    for qid, ranking in rankings.items():
        q = gt[qid]
        positives = q.positives(protocol)
        ignored = q.ignored(protocol)
        rank = 0
        for item in ranking:
            if item in ignored:
                continue
            rank += 1
            if rank > k_max:
                break
            if item in positives:
                counts[rank - 1] += 1
    running = 0
    curve = []
    for k in range(1, k_max + 1):
        running += counts[k - 1]
        curve.append((k, running))
    return curve
