"""Per-document quality metrics and threshold filtering."""

from __future__ import annotations

import math
import operator
import re
from collections import Counter
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from functools import cache
from importlib import resources as _res
from pathlib import Path
from typing import Any

from lpdata.corpus import (
    NO_SPACE_LANGS,
    FilterOutcome,
    split_lines,
    split_sentences,
    tokenize_words,
)

STAGE = "heuristics"

BULLET_CHARS = frozenset("•‣▪◦-*·")
TERMINAL_PUNCT = (".", "!", "?", '"', "'", "”", "。", "！", "？")
_PUNCT_EDGES = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~“”‘’«»…¡¿、。，！？：；（）「」『』"
_RAW_SEGMENT = re.compile(r"[^\S\n]+")
# in space-less scripts a line break next to a character token separates tokens
_NO_SPACE_BREAK = re.compile(r"\n+(?=[\u0e00-\u0e7f\u3040-\u30ff\u3400-\u9fff\uf900-\ufaff])|(?<=[\u0e00-\u0e7f\u3040-\u30ff\u3400-\u9fff\uf900-\ufaff\u3002\uff01\uff1f])\n+")


@dataclass
class DocMetrics:
    num_lines: int = 0
    doc_chars: int = 0
    frac_lines_bullet_start: float = 0.0
    frac_lines_terminal_punct: float = 0.0
    num_sentences: int = 0
    frac_words_no_alpha: float = 0.0
    frac_words_with_newline: float = 0.0
    frac_short_lines: float = 0.0
    frac_stop_words: float = 0.0
    frac_chars_top_2gram: float = 0.0
    frac_chars_top_3gram: float = 0.0
    frac_chars_top_4gram: float = 0.0
    frac_chars_dup_5gram: float = 0.0
    frac_chars_dup_6gram: float = 0.0
    frac_chars_dup_7gram: float = 0.0
    frac_chars_dup_8gram: float = 0.0
    frac_chars_dup_9gram: float = 0.0
    frac_chars_dup_10gram: float = 0.0
    ldnoobw_hits: int = 0
    word_count: int = 0
    symbol_word_ratio: float = 0.0
    has_lorem_ipsum: bool = False
    frac_lines_ellipsis_end: float = 0.0
    has_curly_bracket: bool = False
    avg_word_length: float = 0.0
    has_license_string: bool = False
    has_pii: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DocMetrics:
        return cls(**{f.name: d[f.name] for f in fields(cls)})


METRIC_NAMES = tuple(f.name for f in fields(DocMetrics))


# ---------------------------------------------------------------------------
# resources


def _read_list(text: str) -> list[str]:
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            out.append(line.lower())
    return out


def _bundled(name: str) -> str | None:
    res = _res.files("lpdata.resources").joinpath(name)
    return res.read_text("utf-8") if res.is_file() else None


@dataclass(frozen=True)
class HeuristicResources:
    stopwords: frozenset[str] = frozenset()
    badwords: tuple[tuple[str, ...], ...] = ()
    bullet_chars: frozenset[str] = BULLET_CHARS
    license_phrases: tuple[str, ...] = ()
    short_line_chars: int = 30

    @classmethod
    def load(
        cls,
        lang: str,
        resource_dir: str | Path | None = None,
        short_line_chars: int = 30,
    ) -> HeuristicResources:
        """Load ``stopwords.<lang>.txt``, ``badwords.<lang>.txt`` and
        ``license_phrases.txt`` from ``resource_dir``, falling back to the
        bundled copies. Missing lists are empty."""

        def read(name: str) -> list[str]:
            if resource_dir is not None:
                p = Path(resource_dir) / name
                if p.is_file():
                    return _read_list(p.read_text("utf-8"))
            text = _bundled(name)
            return _read_list(text) if text else []

        return cls(
            stopwords=frozenset(read(f"stopwords.{lang}.txt")),
            badwords=tuple(tuple(w.split()) for w in read(f"badwords.{lang}.txt")),
            license_phrases=tuple(read("license_phrases.txt")),
            short_line_chars=short_line_chars,
        )


@cache
def default_resources(lang: str) -> HeuristicResources:
    return HeuristicResources.load(lang)


# ---------------------------------------------------------------------------
# detectors

_EMAIL = re.compile(r"(?<![\w.+-])[A-Za-z0-9][A-Za-z0-9._%+-]*@[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b")
_PHONE_INTL = re.compile(r"(?<![\w+])\+\d(?:[ ().-]{0,2}\d){6,14}(?![\w])")
_PHONE_US = re.compile(r"(?<![\w.+-])(?:\(\d{3}\)\s?|\d{3}[ .-])\d{3}[ .-]\d{4}(?![\w]|[.-]\d)")
_PHONE_GROUPED = re.compile(r"(?<![\w.+-])\d{2,4}-\d{3,4}-\d{4}(?![\w]|[.-]\d)")
_IPV4 = re.compile(r"(?<![\w.])(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})(?!\w|\.\d)")


def find_pii(text: str) -> list[tuple[str, int, int]]:
    """(kind, start, end) spans for emails, phone numbers and IPv4 addresses."""
    spans = [("email", m.start(), m.end()) for m in _EMAIL.finditer(text)]
    for rx in (_PHONE_INTL, _PHONE_US, _PHONE_GROUPED):
        for m in rx.finditer(text):
            digits = sum(c.isdigit() for c in m.group())
            if 7 <= digits <= 15:
                spans.append(("phone", m.start(), m.end()))
    for m in _IPV4.finditer(text):
        if all(int(g) <= 255 for g in m.groups()):
            spans.append(("ipv4", m.start(), m.end()))
    return sorted(set(spans), key=lambda s: (s[1], s[2], s[0]))


def detect_pii(text: str) -> bool:
    return bool(find_pii(text))


def detect_license(text: str, phrases: tuple[str, ...] | None = None) -> bool:
    if phrases is None:
        phrases = default_resources("en").license_phrases
    lowered = text.lower()
    return any(p in lowered for p in phrases)


# ---------------------------------------------------------------------------
# metrics


def _frac(num: float, den: float) -> float:
    return min(1.0, num / den) if den else 0.0


def _bare(word: str) -> str:
    return word.strip(_PUNCT_EDGES).lower()


def _top_ngram_chars(words: list[str], n: int) -> int:
    """Word chars of the most frequent n-gram times its count; 0 unless it repeats."""
    if len(words) < n:
        return 0
    counts = Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))
    top = max(counts.values())
    if top < 2:
        return 0
    # several n-grams can share the top count; take the widest
    return top * max(sum(map(len, g)) for g, c in counts.items() if c == top)


def _dup_ngram_chars(words: list[str], n: int) -> int:
    """Word chars inside non-first occurrences of repeated n-grams, each position once."""
    if len(words) < n:
        return 0
    first: dict[tuple[str, ...], int] = {}
    marked = [False] * len(words)
    for i in range(len(words) - n + 1):
        gram = tuple(words[i : i + n])
        if gram in first:
            for j in range(i, i + n):
                marked[j] = True
        else:
            first[gram] = i
    return sum(len(w) for w, m in zip(words, marked) if m)


def _count_phrases(tokens: list[str], phrases: tuple[tuple[str, ...], ...]) -> int:
    if not phrases or not tokens:
        return 0
    singles = {p[0] for p in phrases if len(p) == 1}
    hits = sum(1 for t in tokens if t in singles)
    for p in phrases:
        if len(p) > 1:
            k = len(p)
            hits += sum(1 for i in range(len(tokens) - k + 1) if tuple(tokens[i : i + k]) == p)
    return hits


def compute_metrics(
    text: str, lang: str = "en", resources: HeuristicResources | None = None
) -> DocMetrics:
    res = resources if resources is not None else default_resources(lang)
    lines = split_lines(text)
    words = tokenize_words(text, lang)
    n_lines, n_words, n_chars = len(lines), len(words), len(text)
    lowered = [w.lower() for w in words]
    bare = [_bare(w) for w in words]

    if lang in NO_SPACE_LANGS:
        joined = _RAW_SEGMENT.split(_NO_SPACE_BREAK.sub(" ", text))
        newline_words = sum(1 for s in joined if "\n" in s.strip("\n"))
        segments_total = n_words
    else:
        segments = [s for s in _RAW_SEGMENT.split(text) if s]
        newline_words = sum(1 for s in segments if "\n" in s.strip("\n"))
        segments_total = len(segments)
    m = DocMetrics(
        num_lines=n_lines,
        doc_chars=n_chars,
        frac_lines_bullet_start=_frac(sum(1 for ln in lines if ln[0] in res.bullet_chars), n_lines),
        frac_lines_terminal_punct=_frac(sum(1 for ln in lines if ln.endswith(TERMINAL_PUNCT)), n_lines),
        num_sentences=len(split_sentences(text, lang)),
        frac_words_no_alpha=_frac(sum(1 for w in words if not any(c.isalpha() for c in w)), n_words),
        frac_words_with_newline=_frac(newline_words, segments_total),
        frac_short_lines=_frac(sum(1 for ln in lines if len(ln) < res.short_line_chars), n_lines),
        frac_stop_words=_frac(sum(1 for w in bare if w in res.stopwords), n_words),
        ldnoobw_hits=_count_phrases(bare, res.badwords),
        word_count=n_words,
        symbol_word_ratio=(text.count("#") + text.count("…") + text.count("...")) / n_words if n_words else 0.0,
        has_lorem_ipsum="lorem ipsum" in text.lower(),
        frac_lines_ellipsis_end=_frac(sum(1 for ln in lines if ln.endswith(("...", "…"))), n_lines),
        has_curly_bracket="{" in text or "}" in text,
        avg_word_length=sum(map(len, words)) / n_words if n_words else 0.0,
        has_license_string=detect_license(text, res.license_phrases),
        has_pii=detect_pii(text),
    )
    for n in (2, 3, 4):
        setattr(m, f"frac_chars_top_{n}gram", _frac(_top_ngram_chars(lowered, n), n_chars))
    for n in range(5, 11):
        setattr(m, f"frac_chars_dup_{n}gram", _frac(_dup_ngram_chars(lowered, n), n_chars))
    return m


# ---------------------------------------------------------------------------
# thresholds

OPS = {
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
    "==": operator.eq,
}

Bound = tuple[str, float]

DEFAULT_EN_RULES: dict[str, tuple[Bound, ...]] = {
    "num_lines": ((">=", 5),),
    "doc_chars": ((">=", 200),),
    "frac_lines_bullet_start": (("<=", 0.9),),
    "frac_lines_terminal_punct": ((">", 0.12),),
    "num_sentences": ((">=", 5),),
    "frac_words_no_alpha": (("<=", 0.2),),
    "frac_words_with_newline": (("<=", 0.3),),
    "frac_short_lines": (("<", 0.67),),
    "frac_stop_words": ((">=", 0.0),),
    "frac_chars_top_2gram": (("<=", 0.2),),
    "frac_chars_top_3gram": (("<=", 0.18),),
    "frac_chars_top_4gram": (("<=", 0.16),),
    "frac_chars_dup_5gram": (("<=", 0.15),),
    "frac_chars_dup_6gram": (("<=", 0.14),),
    "frac_chars_dup_7gram": (("<=", 0.13),),
    "frac_chars_dup_8gram": (("<=", 0.12),),
    "frac_chars_dup_9gram": (("<=", 0.11),),
    "frac_chars_dup_10gram": (("<=", 0.1),),
    "ldnoobw_hits": (("==", 0),),
    "word_count": ((">=", 50), ("<=", 100_000)),
    "symbol_word_ratio": (("<=", 0.1),),
    "has_lorem_ipsum": (("==", 0),),
    "frac_lines_ellipsis_end": (("<=", 0.3),),
    "has_curly_bracket": (("==", 0),),
    "avg_word_length": ((">=", 3), ("<=", 10)),
    "has_license_string": (("==", 0),),
    "has_pii": (("==", 0),),
}


def _no_space_rules(lang: str) -> dict[str, tuple[Bound, ...]]:
    rules = dict(DEFAULT_EN_RULES)
    # per-character tokens make word length meaningless
    rules["avg_word_length"] = ((">=", 0),)
    if lang == "th":
        # Thai lines rarely end in punctuation
        rules["frac_lines_terminal_punct"] = ((">=", 0),)
    return rules


@dataclass
class ThresholdConfig:
    """Per-language rule table: metric -> one or more (comparator, bound)."""

    rules: dict[str, dict[str, tuple[Bound, ...]]] = field(
        default_factory=lambda: {
            "en": dict(DEFAULT_EN_RULES),
            "ko": dict(DEFAULT_EN_RULES),
            "ja": _no_space_rules("ja"),
            "th": _no_space_rules("th"),
        }
    )

    def __post_init__(self) -> None:
        for lang, table in self.rules.items():
            unknown = set(table) - set(METRIC_NAMES)
            if unknown:
                raise ValueError(f"unknown metric(s) for {lang}: {sorted(unknown)}")
            missing = set(METRIC_NAMES) - set(table)
            if missing:
                raise ValueError(f"no rule for metric(s) in {lang}: {sorted(missing)}")
            for metric, bounds in table.items():
                for op, value in bounds:
                    if op not in OPS:
                        raise ValueError(f"bad comparator {op!r} for {lang}.{metric}")
                    if not isinstance(value, (int, float)) or math.isnan(value):
                        raise ValueError(f"bad bound {value!r} for {lang}.{metric}")

    @classmethod
    def from_mapping(cls, tree: Mapping[str, Any]) -> ThresholdConfig:
        """Build from ``{lang: {metric: {op, value} | [{op, value}, ...]}}``.

        Languages listed override the defaults metric by metric; a language
        not among the defaults starts from the English table.
        """
        base = cls().rules
        for lang, table in tree.items():
            if not isinstance(table, Mapping):
                continue
            merged = dict(base.get(lang, DEFAULT_EN_RULES))
            for metric, spec in table.items():
                if metric not in METRIC_NAMES:
                    raise ValueError(f"unknown metric {lang}.{metric}")
                items = spec if isinstance(spec, list) else [spec]
                merged[metric] = tuple((str(it["op"]), it["value"]) for it in items)
            base[lang] = merged
        return cls(base)

    def to_mapping(self) -> dict[str, Any]:
        return {
            lang: {m: [{"op": op, "value": v} for op, v in bounds] for m, bounds in table.items()}
            for lang, table in sorted(self.rules.items())
        }


def rule_passes(value: float, bounds: tuple[Bound, ...]) -> bool:
    return all(OPS[op](value, bound) for op, bound in bounds)


def apply_thresholds(metrics: DocMetrics | Mapping[str, Any], cfg: ThresholdConfig, lang: str = "en") -> FilterOutcome:
    """Evaluate every rule; reasons name each failing metric in table order."""
    table = cfg.rules.get(lang)
    if table is None:
        raise KeyError("no_thresholds_for_lang")
    values = metrics.to_dict() if isinstance(metrics, DocMetrics) else metrics
    failed = [name for name in METRIC_NAMES if not rule_passes(values[name], table[name])]
    return FilterOutcome(STAGE, not failed, failed)
