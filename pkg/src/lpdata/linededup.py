"""Line-level deduplication within registered-domain groups.

Pass 1 counts, per domain group, how many distinct documents contain each
normalized line. Pass 2 strips every line whose document frequency crosses
the policy threshold from every document of that group.
"""

from __future__ import annotations

import heapq
import os
import struct
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

from lpdata.corpus import Document, FilterOutcome, split_lines
from lpdata.hashing import hash64, line_fingerprint

STAGE = "linededup"


@dataclass
class LineDedupPolicy:
    max_doc_frequency: int = 5
    min_line_chars: int = 10
    min_remaining_chars: int = 200
    normalize: bool = field(default=True, init=False)

    def __post_init__(self) -> None:
        if self.max_doc_frequency < 2:
            raise ValueError("max_doc_frequency must be >= 2")

    def removes(self, count: int, line_chars: int) -> bool:
        """Lines below ``min_line_chars`` go as soon as two documents share them."""
        if count > self.max_doc_frequency:
            return True
        return line_chars < self.min_line_chars and count >= 2


def normalize_line(line: str) -> str:
    return line.strip().lower()


@dataclass
class LineCountTable:
    group: str
    counts: dict[int, int] = field(default_factory=dict)
    line_chars: dict[int, int] = field(default_factory=dict)

    def add_document(self, text: str) -> None:
        for fp, n in _distinct_lines(text).items():
            self.counts[fp] = self.counts.get(fp, 0) + 1
            self.line_chars[fp] = n

    def merge(self, other: LineCountTable) -> LineCountTable:
        """Sum of two document-disjoint partial tables."""
        if other.group != self.group:
            raise ValueError("wrong_group")
        out = LineCountTable(self.group, dict(self.counts), dict(self.line_chars))
        for fp, c in other.counts.items():
            out.counts[fp] = out.counts.get(fp, 0) + c
        out.line_chars.update(other.line_chars)
        return out

    def removed_fingerprints(self, policy: LineDedupPolicy) -> set[int]:
        return {fp for fp, c in self.counts.items() if policy.removes(c, self.line_chars[fp])}


def _distinct_lines(text: str) -> dict[int, int]:
    out = {}
    for line in split_lines(text):
        norm = normalize_line(line)
        out[line_fingerprint(norm)] = len(norm)
    return out


def build_line_counts(docs: Iterable[Document]) -> dict[str, LineCountTable]:
    tables: dict[str, LineCountTable] = {}
    for doc in docs:
        table = tables.get(doc.domain_key)
        if table is None:
            table = tables[doc.domain_key] = LineCountTable(doc.domain_key)
        table.add_document(doc.text)
    return tables


def strip_lines(
    doc: Document,
    removed: set[int],
    policy: LineDedupPolicy,
    removed_lines: Counter | None = None,
) -> Document:
    kept = []
    for line in split_lines(doc.text):
        norm = normalize_line(line)
        if line_fingerprint(norm) in removed:
            if removed_lines is not None:
                removed_lines[line] += 1
        else:
            kept.append(line)
    doc.text = "\n".join(kept)
    if len(doc.text) < policy.min_remaining_chars:
        doc.filter = FilterOutcome.drop(STAGE, "line_dedup_empty")
    else:
        doc.filter = FilterOutcome.keep(STAGE)
    return doc


def apply_line_dedup(
    doc: Document,
    table: LineCountTable,
    policy: LineDedupPolicy,
    removed_lines: Counter | None = None,
) -> Document:
    """Strip boilerplate lines from ``doc``; sets ``doc.filter``.

    ``removed_lines`` (if given) accumulates removed line text -> occurrences.
    """
    if table.group != doc.domain_key:
        raise ValueError("wrong_group")
    return strip_lines(doc, table.removed_fingerprints(policy), policy, removed_lines)


def dedup_corpus(
    docs: list[Document], policy: LineDedupPolicy, removed_lines: Counter | None = None
) -> list[Document]:
    """Both passes in memory; returns all documents with ``filter`` set."""
    tables = build_line_counts(docs)
    removed = {g: t.removed_fingerprints(policy) for g, t in tables.items()}
    return [strip_lines(d, removed[d.domain_key], policy, removed_lines) for d in docs]


# ---------------------------------------------------------------------------
# random-bucket baseline


def _bucketed_removals(
    docs: list[Document], policy: LineDedupPolicy, bucket_of
) -> tuple[set[tuple[str, int]], int]:
    counts: dict[int, dict[int, int]] = {}
    chars: dict[int, int] = {}
    placed = []
    for doc in docs:
        seen: set[tuple[int, int]] = set()
        for pos, line in enumerate(split_lines(doc.text)):
            norm = normalize_line(line)
            fp = line_fingerprint(norm)
            chars[fp] = len(norm)
            bucket = bucket_of(doc, pos, fp)
            placed.append((doc.id, pos, bucket, fp))
            if (bucket, fp) in seen:
                continue
            seen.add((bucket, fp))
            table = counts.setdefault(bucket, {})
            table[fp] = table.get(fp, 0) + 1
    removed = {
        (doc_id, pos)
        for doc_id, pos, bucket, fp in placed
        if policy.removes(counts[bucket][fp], chars[fp])
    }
    peak = max((len(t) for t in counts.values()), default=0)
    return removed, peak


def line_removals(docs: list[Document], policy: LineDedupPolicy, bucket_count: int | None = None):
    """(removed (doc id, line position) set, peak table entries).

    ``bucket_count=None`` groups by ``domain_key``; otherwise every line
    occurrence is assigned to a pseudo-random bucket by hashing its
    (document id, line position).
    """
    if bucket_count is None:
        return _bucketed_removals(docs, policy, lambda d, pos, fp: hash64(d.domain_key))
    if bucket_count < 1:
        raise ValueError("bucket_count must be >= 1")
    return _bucketed_removals(
        docs, policy, lambda d, pos, fp: hash64(f"{d.id}\x00{pos}") % bucket_count
    )


def compare_random_bucketing(docs: Iterable[Document], bucket_count: int, policy: LineDedupPolicy) -> dict:
    """Removal rate and peak table size: domain grouping vs random buckets."""
    docs = list(docs)
    total = sum(len(split_lines(d.text)) for d in docs)
    dom, dom_peak = line_removals(docs, policy)
    rnd, rnd_peak = line_removals(docs, policy, bucket_count)

    def rate(n: int) -> float:
        return n / total if total else 0.0

    return {
        "total_lines": total,
        "bucket_count": bucket_count,
        "domain": {"lines_removed": len(dom), "removal_rate": rate(len(dom)), "peak_table_entries": dom_peak},
        "random": {"lines_removed": len(rnd), "removal_rate": rate(len(rnd)), "peak_table_entries": rnd_peak},
        "domain_only": len(dom - rnd),
        "random_only": len(rnd - dom),
    }


# ---------------------------------------------------------------------------
# spill files: sorted little-endian records
#   (u64 group id, u64 fingerprint, u32 document count, u32 line chars)

_REC = struct.Struct("<QQII")


def group_id(domain_key: str) -> int:
    return hash64(domain_key)


def write_spill(path: str | os.PathLike, tables: Iterable[LineCountTable]) -> int:
    rows = []
    for t in tables:
        gid = group_id(t.group)
        rows.extend((gid, fp, c, t.line_chars.get(fp, 0)) for fp, c in t.counts.items())
    rows.sort()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        fh.writelines(_REC.pack(*row) for row in rows)
    os.replace(tmp, path)
    return len(rows)


def iter_spill(path: str | os.PathLike) -> Iterator[tuple[int, int, int, int]]:
    with open(path, "rb") as fh:
        while True:
            raw = fh.read(_REC.size * 4096)
            if not raw:
                return
            if len(raw) % _REC.size:
                raise ValueError(f"{path}: truncated spill file")
            yield from _REC.iter_unpack(raw)


def merge_spills(paths: Iterable[str | os.PathLike]) -> Iterator[tuple[int, int, int, int]]:
    """k-way merge of sorted spill files, summing counts of equal (group, fp)."""
    current = None
    for gid, fp, c, n in heapq.merge(*(iter_spill(p) for p in paths)):
        if current is not None and current[0] == gid and current[1] == fp:
            current[2] += c
            continue
        if current is not None:
            yield tuple(current)
        current = [gid, fp, c, n]
    if current is not None:
        yield tuple(current)


class SpillingCounter:
    """Pass-1 accumulator that spills to disk when over its memory budget."""

    # rough CPython cost of one (fp -> count) entry across the two dicts
    BYTES_PER_ENTRY = 200

    def __init__(self, spill_dir: str | os.PathLike, prefix: str, max_table_mb: float = 1024):
        self.spill_dir = Path(spill_dir)
        self.prefix = prefix
        self.max_entries = max(1, int(max_table_mb * 1024 * 1024 / self.BYTES_PER_ENTRY))
        self.tables: dict[str, LineCountTable] = {}
        self.entries = 0
        self.paths: list[Path] = []

    def add(self, doc: Document) -> None:
        table = self.tables.get(doc.domain_key)
        if table is None:
            table = self.tables[doc.domain_key] = LineCountTable(doc.domain_key)
        before = len(table.counts)
        table.add_document(doc.text)
        self.entries += len(table.counts) - before
        if self.entries >= self.max_entries:
            self.flush()

    def flush(self) -> None:
        if not self.tables:
            return
        self.spill_dir.mkdir(parents=True, exist_ok=True)
        path = self.spill_dir / f"{self.prefix}.{len(self.paths):04d}.spill"
        write_spill(path, self.tables.values())
        self.paths.append(path)
        self.tables = {}
        self.entries = 0

    def finish(self) -> list[Path]:
        self.flush()
        return self.paths
