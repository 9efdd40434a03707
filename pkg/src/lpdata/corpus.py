"""Document model, text units and the JSON-lines shard format."""

from __future__ import annotations

import gzip
import io
import json
import logging
import os
import re
import tempfile
from collections import Counter
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

DOMAIN_LABELS = ("finance", "law", "medical", "other")
NO_SPACE_LANGS = frozenset({"ja", "th"})

_NO_SPACE_CHARS = (
    "\u0e00-\u0e7f"  # Thai
    "\u3040-\u30ff"  # Hiragana, Katakana
    "\u31f0-\u31ff"
    "\u3400-\u4dbf"
    "\u4e00-\u9fff"
    "\uf900-\ufaff"
)
# Thai vowel signs and tone marks stay attached to the preceding character
_COMBINING = "\u0e31\u0e34-\u0e3a\u0e47-\u0e4e\u3099\u309a"
_NO_SPACE_SPLIT = re.compile(f"[{_NO_SPACE_CHARS}][{_COMBINING}]*|[^{_NO_SPACE_CHARS}]+")
_SENTENCE_END = re.compile(r"(?<=[.!?\u3002\uff01\uff1f])(?:\s+|$)")
_THAI_BREAK = re.compile(r"(?<=[.!?\u3002\uff01\uff1f])(?:\s+|$)|(?<=[\u0e00-\u0e7f])\s+")
_WS = re.compile(r"\s+")


@dataclass
class FilterOutcome:
    stage: str
    kept: bool
    reasons: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kept == bool(self.reasons):
            raise ValueError("kept must be true exactly when reasons is empty")

    @classmethod
    def keep(cls, stage: str) -> FilterOutcome:
        return cls(stage, True, [])

    @classmethod
    def drop(cls, stage: str, *reasons: str) -> FilterOutcome:
        return cls(stage, False, list(reasons))

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "kept": self.kept, "reasons": list(self.reasons)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FilterOutcome:
        return cls(d["stage"], bool(d["kept"]), list(d.get("reasons", [])))


_DOC_FIELDS = (
    "id", "url", "domain_key", "dump_id", "lang", "lang_score", "text",
    "metrics", "quality_score", "domain_label", "domain_score", "filter",
)


@dataclass
class Document:
    """One web page as it moves through the pipeline.

    ``extra`` holds any JSON fields this version does not know about so
    they survive a read/write round trip.
    """

    id: str
    url: str = ""
    domain_key: str = ""
    dump_id: str = ""
    lang: str = ""
    lang_score: float = 0.0
    text: str = ""
    metrics: dict[str, Any] = field(default_factory=dict)
    quality_score: float | None = None
    domain_label: str | None = None
    domain_score: float | None = None
    filter: FilterOutcome | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "url": self.url,
            "domain_key": self.domain_key,
            "dump_id": self.dump_id,
            "lang": self.lang,
            "lang_score": self.lang_score,
            "text": self.text,
            "metrics": self.metrics,
            "quality_score": self.quality_score,
            "domain_label": self.domain_label,
            "domain_score": self.domain_score,
            "filter": self.filter.to_dict() if self.filter else None,
        }
        for k, v in self.extra.items():
            d.setdefault(k, v)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Document:
        if not isinstance(d, dict) or not isinstance(d.get("id"), str):
            raise ValueError("document needs a string 'id'")
        flt = d.get("filter")
        return cls(
            id=d["id"],
            url=d.get("url", ""),
            domain_key=d.get("domain_key", ""),
            dump_id=d.get("dump_id", ""),
            lang=d.get("lang", ""),
            lang_score=d.get("lang_score", 0.0),
            text=d.get("text", ""),
            metrics=dict(d.get("metrics") or {}),
            quality_score=d.get("quality_score"),
            domain_label=d.get("domain_label"),
            domain_score=d.get("domain_score"),
            filter=FilterOutcome.from_dict(flt) if flt else None,
            extra={k: v for k, v in d.items() if k not in _DOC_FIELDS},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------------------
# text units


def split_lines(text: str) -> list[str]:
    """Trimmed, non-empty newline-separated lines, in order."""
    out = []
    for raw in text.split("\n"):
        line = raw.strip()
        if line:
            out.append(line)
    return out


def normalize_text(text: str) -> str:
    """Canonical body text: no CR, no blank lines, no edge whitespace per line."""
    return "\n".join(split_lines(text.replace("\r\n", "\n").replace("\r", "\n")))


def tokenize_words(text: str, lang: str = "") -> list[str]:
    words = text.split()
    if lang not in NO_SPACE_LANGS:
        return words
    out: list[str] = []
    for w in words:
        out.extend(_NO_SPACE_SPLIT.findall(w))
    return out


def split_sentences(text: str, lang: str = "") -> list[str]:
    """Split after . ! ? (and fullwidth forms) that precede whitespace or the end.

    A line break without terminal punctuation does not end a sentence, and
    abbreviations such as "e.g." over-split. Thai, which marks sentence ends
    with a space rather than punctuation, also splits at whitespace following
    a Thai character. Internal whitespace in each sentence is collapsed to
    single spaces.
    """
    out = []
    pattern = _THAI_BREAK if lang == "th" else _SENTENCE_END
    for chunk in pattern.split(text):
        chunk = _WS.sub(" ", chunk).strip()
        if chunk:
            out.append(chunk)
    return out


# ---------------------------------------------------------------------------
# JSON-lines shards


@dataclass
class RecordError:
    path: str
    line: int
    message: str


def shard_path(root: str | os.PathLike, stage: str, index: int) -> Path:
    return Path(root) / stage / f"{index:05d}.jsonl.gz"


def _open_text(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def read_jsonl(
    path: str | os.PathLike, errors: list[RecordError] | None = None
) -> Iterator[Document]:
    """Stream documents from a (optionally gzipped) JSONL file.

    Malformed lines are logged, appended to ``errors`` when given, and skipped.
    """
    path = Path(path)
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = Document.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: bad record: %s", path, lineno, exc)
                if errors is not None:
                    errors.append(RecordError(str(path), lineno, str(exc)))
                continue
            yield doc


def write_jsonl(path: str | os.PathLike, docs: Iterable[Document]) -> int:
    """Atomically write documents; returns the number written.

    Gzip output carries a zeroed mtime and no filename so identical inputs
    produce identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    n = 0
    try:
        with os.fdopen(fd, "wb") as raw:
            if path.suffix == ".gz":
                gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
                stream = io.TextIOWrapper(gz, encoding="utf-8", newline="\n")
            else:
                gz = None
                stream = io.TextIOWrapper(raw, encoding="utf-8", newline="\n")
            for doc in docs:
                stream.write(doc.to_json())
                stream.write("\n")
                n += 1
            stream.flush()
            stream.detach()
            if gz is not None:
                gz.close()
            raw.flush()
            os.fsync(raw.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n


# ---------------------------------------------------------------------------
# Wikipedia category selection


def iter_cirrus(path: str | os.PathLike) -> Iterator[dict[str, Any]]:
    """Content records of a Cirrus search dump (optionally gzipped).

    Bulk-index action lines are folded into the following content record
    as ``_id``.
    """
    path = Path(path)
    pending_id = None
    with _open_text(path, "r") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "index" in rec and len(rec) == 1:
                pending_id = rec["index"].get("_id")
                continue
            if pending_id is not None:
                rec.setdefault("_id", pending_id)
                pending_id = None
            yield rec


def select_by_category(
    wiki_records: Iterable[dict[str, Any]],
    keywords: Iterable[str],
    stats: Counter | None = None,
) -> Iterator[Document]:
    """Documents whose categories contain any keyword (case-insensitive substring)."""
    keys = [k.lower() for k in keywords if k]
    stats = stats if stats is not None else Counter()
    for rec in wiki_records:
        cats = rec.get("category")
        if not isinstance(cats, list) or "text" not in rec:
            stats["missing_category"] += 1
            continue
        lowered = [str(c).lower() for c in cats]
        if not any(k in c for c in lowered for k in keys):
            stats["no_match"] += 1
            continue
        stats["selected"] += 1
        title = str(rec.get("title", ""))
        wiki = rec.get("wiki", "wiki")
        rid = rec.get("_id", rec.get("page_id", title))
        yield Document(
            id=f"{wiki}:{rid}",
            url=rec.get("url") or f"https://{wiki}/wiki/{title.replace(' ', '_')}",
            dump_id=str(rec.get("dump_id", wiki)),
            lang=rec.get("language", ""),
            text=normalize_text(str(rec["text"])),
            extra={"categories": cats},
        )
