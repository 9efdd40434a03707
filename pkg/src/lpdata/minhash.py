"""MinHash signatures, banded LSH and near-duplicate cluster resolution."""

from __future__ import annotations

import os
import struct
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import BinaryIO

import numpy as np
import xxhash

from lpdata.corpus import Document, tokenize_words

STAGE = "globaldedup"
# kept, but counted: documents with fewer words than one shingle
TOO_SHORT = "too_short_for_minhash"
MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_SHINGLE_SEED = 0x5348494E474C45  # "SHINGLE"
_CHUNK = 4096


@dataclass(frozen=True)
class LshParams:
    shingle_words: int = 5
    num_perms: int = 128
    bands: int = 16
    rows: int = 8
    jaccard_threshold: float = 0.7
    seed: int = 1

    def __post_init__(self) -> None:
        if self.shingle_words < 1:
            raise ValueError("shingle_words must be >= 1")
        if self.bands * self.rows != self.num_perms:
            raise ValueError("bands * rows must equal num_perms")

    @property
    def implied_threshold(self) -> float:
        """Similarity at which a pair collides in some band with probability ~1/2."""
        return (1.0 / self.bands) ** (1.0 / self.rows)


@dataclass(eq=False)
class MinHashSignature:
    doc_id: str
    values: np.ndarray
    shingle_count: int

    @property
    def is_sentinel(self) -> bool:
        return self.shingle_count == 0


@dataclass
class DupCluster:
    members: list[str]
    kept: str

    def __post_init__(self) -> None:
        if self.kept not in self.members or len(self.members) < 2:
            raise ValueError("a cluster keeps one of its >= 2 members")


def shingle(words: Sequence[str], n: int) -> set[int]:
    """Hashes of every n-word window over lowercased tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    low = [w.lower() for w in words]
    h = xxhash.xxh64_intdigest
    return {h(" ".join(low[i : i + n]).encode("utf-8"), _SHINGLE_SEED) for i in range(len(low) - n + 1)}


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def permutation_seeds(params: LshParams) -> np.ndarray:
    """One 64-bit key per permutation, drawn from a splitmix64 stream."""
    with np.errstate(over="ignore"):
        base = np.uint64(params.seed & 0xFFFFFFFFFFFFFFFF)
        steps = np.arange(1, params.num_perms + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        return _splitmix(base + steps)


def signature(shingles: Iterable[int], params: LshParams, doc_id: str = "") -> MinHashSignature:
    """k minima of the seeded 64-bit hashes ``h_i(s) = mix64(s xor key_i)``.

    ``mix64`` is the splitmix64 finalizer, a bijection on 64-bit integers,
    so each key realizes one pseudo-random permutation. An empty shingle set
    yields the all-ones sentinel.
    """
    arr = np.fromiter(shingles, dtype=np.uint64)
    if arr.size == 0:
        return MinHashSignature(doc_id, np.full(params.num_perms, MASK64, dtype=np.uint64), 0)
    keys = permutation_seeds(params)[:, None]
    mins = np.full(params.num_perms, MASK64, dtype=np.uint64)
    for start in range(0, arr.size, _CHUNK):
        block = _splitmix(arr[None, start : start + _CHUNK] ^ keys)
        np.minimum(mins, block.min(axis=1), out=mins)
    return MinHashSignature(doc_id, mins, int(arr.size))


def document_signature(doc: Document, params: LshParams) -> MinHashSignature:
    words = tokenize_words(doc.text, doc.lang)
    return signature(shingle(words, params.shingle_words), params, doc.id)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    if a.is_sentinel or b.is_sentinel:
        return 0.0
    return float(np.count_nonzero(a.values == b.values)) / len(a.values)


def band_hashes(sig: MinHashSignature, params: LshParams) -> list[int]:
    raw = sig.values.astype("<u8")
    r = params.rows
    return [
        xxhash.xxh64_intdigest(raw[i * r : (i + 1) * r].tobytes(), i) for i in range(params.bands)
    ]


def lsh_candidates(signatures: Sequence[MinHashSignature], params: LshParams) -> Iterator[tuple[str, str]]:
    """Unordered id pairs sharing at least one band, each once, sorted."""
    buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
    for ix, sig in enumerate(signatures):
        if sig.is_sentinel:
            continue
        for band, h in enumerate(band_hashes(sig, params)):
            buckets[(band, h)].append(ix)
    pairs: set[tuple[str, str]] = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for i, j in combinations(members, 2):
            a, b = signatures[i].doc_id, signatures[j].doc_id
            pairs.add((a, b) if a < b else (b, a))
    yield from sorted(pairs)


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        root = x
        while self.parent.get(root, root) != root:
            root = self.parent[root]
        while self.parent.get(x, x) != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes the root so the result is order-independent
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra
            self.parent.setdefault(ra, ra)


def cluster_and_resolve(
    candidates: Iterable[tuple[str, str]],
    signatures: Mapping[str, MinHashSignature],
    params: LshParams,
    text_lengths: Mapping[str, int],
    exact_shingles: Mapping[str, set[int]] | None = None,
) -> tuple[list[DupCluster], dict[str, str]]:
    """Verify candidates, union them, keep the longest text per cluster.

    Ties on length go to the lexicographically smallest id. Returns the
    clusters and a map dropped id -> kept id. ``exact_shingles`` switches
    verification from the signature estimate to exact Jaccard.
    """
    uf = _UnionFind()
    for a, b in candidates:
        if exact_shingles is not None:
            sa, sb = exact_shingles[a], exact_shingles[b]
            sim = len(sa & sb) / len(sa | sb) if (sa or sb) else 0.0
        else:
            sim = estimate_jaccard(signatures[a], signatures[b])
        if sim >= params.jaccard_threshold:
            uf.union(a, b)
    groups: dict[str, list[str]] = defaultdict(list)
    for x in list(uf.parent):
        groups[uf.find(x)].append(x)
    clusters, dropped = [], {}
    for members in groups.values():
        if len(members) < 2:
            continue
        members.sort()
        kept = min(members, key=lambda m: (-text_lengths[m], m))
        clusters.append(DupCluster(members, kept))
        for m in members:
            if m != kept:
                dropped[m] = kept
    clusters.sort(key=lambda c: c.members[0])
    return clusters, dropped


def find_near_duplicates(docs: Iterable[Document], params: LshParams) -> tuple[list[DupCluster], dict[str, str]]:
    """In-memory dedup; documents of different dumps are never compared."""
    by_dump: dict[str, list[tuple[MinHashSignature, int]]] = defaultdict(list)
    for doc in docs:
        by_dump[doc.dump_id].append((document_signature(doc, params), len(doc.text)))
    clusters, dropped = [], {}
    for dump in sorted(by_dump):
        sigs = [s for s, _ in by_dump[dump]]
        lengths = {s.doc_id: n for s, n in by_dump[dump]}
        c, d = cluster_and_resolve(lsh_candidates(sigs, params), {s.doc_id: s for s in sigs}, params, lengths)
        clusters.extend(c)
        dropped.update(d)
    return clusters, dropped


# ---------------------------------------------------------------------------
# spill format, one record per document, little-endian:
#   u16 id_len, id utf-8, u16 dump_len, dump utf-8, u32 text_len,
#   u32 shingle_count, k x u64 signature values


@dataclass
class SpilledSignature:
    signature: MinHashSignature
    dump_id: str
    text_len: int


def write_signature(fh: BinaryIO, sig: MinHashSignature, dump_id: str, text_len: int) -> None:
    did = sig.doc_id.encode("utf-8")
    dump = dump_id.encode("utf-8")
    fh.write(struct.pack("<H", len(did)) + did + struct.pack("<H", len(dump)) + dump)
    fh.write(struct.pack("<II", text_len, sig.shingle_count))
    fh.write(sig.values.astype("<u8").tobytes())


def read_signatures(path: str | os.PathLike, num_perms: int) -> Iterator[SpilledSignature]:
    data = Path(path).read_bytes()
    pos = 0
    width = 8 * num_perms
    while pos < len(data):
        try:
            (n,) = struct.unpack_from("<H", data, pos)
            did = data[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (n,) = struct.unpack_from("<H", data, pos)
            dump = data[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            text_len, count = struct.unpack_from("<II", data, pos)
            pos += 8
        except struct.error:
            raise ValueError(f"{path}: truncated signature record") from None
        if pos + width > len(data):
            raise ValueError(f"{path}: truncated signature record")
        values = np.frombuffer(data, dtype="<u8", count=num_perms, offset=pos).astype(np.uint64)
        pos += width
        yield SpilledSignature(MinHashSignature(did, values, count), dump, text_len)


def partitioned_candidates(
    spills: Iterable[SpilledSignature], params: LshParams, partitions: int, work_dir: str | os.PathLike
) -> tuple[list[tuple[str, str, str]], dict[str, SpilledSignature]]:
    """Banding with postings spread over ``partitions`` files by band-hash range.

    Returns candidate (dump, id_a, id_b) triples and the signatures by id.
    Band postings are keyed by dump so dumps never mix.
    """
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    by_id: dict[str, SpilledSignature] = {}
    ids: list[str] = []
    handles = [open(work / f"postings.{p:04d}.bin", "wb") for p in range(partitions)]
    rec = struct.Struct("<QQI")
    try:
        for sp in spills:
            sig = sp.signature
            by_id[sig.doc_id] = sp
            if sig.is_sentinel:
                continue
            ix = len(ids)
            ids.append(sig.doc_id)
            dump_key = xxhash.xxh64_intdigest(sp.dump_id.encode("utf-8"))
            for band, h in enumerate(band_hashes(sig, params)):
                key = xxhash.xxh64_intdigest(struct.pack("<QQI", h, dump_key, band))
                handles[(key * partitions) >> 64].write(rec.pack(key, dump_key, ix))
    finally:
        for fh in handles:
            fh.close()
    pairs: set[tuple[str, str, str]] = set()
    for p in range(partitions):
        path = work / f"postings.{p:04d}.bin"
        buckets: dict[int, list[int]] = defaultdict(list)
        for key, _, ix in rec.iter_unpack(path.read_bytes()):
            buckets[key].append(ix)
        for members in buckets.values():
            for i, j in combinations(sorted(set(members)), 2):
                a, b = ids[i], ids[j]
                if by_id[a].dump_id != by_id[b].dump_id:
                    continue
                pairs.add((by_id[a].dump_id, *((a, b) if a < b else (b, a))))
        path.unlink()
    return sorted(pairs), by_id
