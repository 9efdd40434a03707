"""Quality filtering with the trained classifier and domain routing."""

from __future__ import annotations

import json
import os
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from lpdata.classifier import ClassifierModel, load_model, predict, predict_proba
from lpdata.corpus import (
    DOMAIN_LABELS,
    Document,
    FilterOutcome,
    tokenize_words,
    write_jsonl,
)

QUALITY_STAGE = "quality"
DOMAIN_STAGE = "domain"
QUALITY_LABELS = frozenset({"positive", "negative"})
CORPUS_OF_LABEL = {"medical": "medical", "finance": "financial", "law": "legal", "other": "common"}
CORPORA = ("medical", "financial", "legal", "common")
REPORT_NAME = "report.domain_counts.json"


class ConfigError(ValueError):
    """Configuration problems detected before any document is processed."""


@dataclass
class RoutingConfig:
    quality_model_path: str | None = None
    quality_min_score: float = 0.5
    domain_model_path: str | None = None
    domain_min_score: float = 0.5
    domain_labels: tuple[str, ...] = field(default=DOMAIN_LABELS)

    def __post_init__(self) -> None:
        for name in ("quality_min_score", "domain_min_score"):
            v = getattr(self, name)
            if not v >= 0:
                raise ConfigError(f"{name} out of range: {v}")
        self.domain_labels = tuple(self.domain_labels)
        if "other" not in self.domain_labels:
            raise ConfigError("domain_labels must include 'other'")

    def check_quality_model(self, model: ClassifierModel) -> None:
        if set(model.labels) != QUALITY_LABELS:
            raise ConfigError(f"quality model labels {model.labels} != {sorted(QUALITY_LABELS)}")

    def check_domain_model(self, model: ClassifierModel) -> None:
        if set(model.labels) != set(self.domain_labels):
            raise ConfigError(f"domain model labels {model.labels} != {list(self.domain_labels)}")

    def load_quality_model(self) -> ClassifierModel:
        model = _load(self.quality_model_path, "quality")
        self.check_quality_model(model)
        return model

    def load_domain_model(self) -> ClassifierModel:
        model = _load(self.domain_model_path, "domain")
        self.check_domain_model(model)
        return model


def _load(path: str | None, what: str) -> ClassifierModel:
    if not path:
        raise ConfigError(f"no {what} model path configured")
    if not os.path.exists(path):
        raise ConfigError(f"{what} model not found: {path}")
    return load_model(path)


def quality_filter(model: ClassifierModel, doc: Document, cfg: RoutingConfig) -> Document:
    """Set ``quality_score`` = P(positive) and keep iff it reaches the minimum."""
    probs = predict_proba(model, doc.text)
    doc.quality_score = float(probs[model.labels.index("positive")])
    if doc.quality_score >= cfg.quality_min_score:
        doc.filter = FilterOutcome.keep(QUALITY_STAGE)
    else:
        doc.filter = FilterOutcome.drop(QUALITY_STAGE, "low_quality")
    return doc


def classify_domain(model: ClassifierModel, doc: Document, cfg: RoutingConfig) -> Document:
    """Label with the top class; low-confidence predictions become 'other'. Never drops."""
    label, prob = predict(model, doc.text)[0]
    doc.domain_label = label if prob >= cfg.domain_min_score else "other"
    doc.domain_score = prob
    doc.filter = FilterOutcome.keep(DOMAIN_STAGE)
    return doc


def corpus_of(doc: Document) -> str:
    if doc.domain_label is None:
        raise ValueError(f"document {doc.id} has no domain label")
    return CORPUS_OF_LABEL.get(doc.domain_label, doc.domain_label)


def count_tokens(doc: Document) -> int:
    return len(tokenize_words(doc.text, doc.lang))


def domain_report(docs: Iterable[Document]) -> dict[str, dict[str, dict[str, int]]]:
    """{corpus -> {lang -> {docs, tokens}}}; the four corpora are always present."""
    report: dict[str, dict[str, dict[str, int]]] = {c: {} for c in CORPORA}
    for doc in docs:
        cell = report.setdefault(corpus_of(doc), {}).setdefault(doc.lang, {"docs": 0, "tokens": 0})
        cell["docs"] += 1
        cell["tokens"] += count_tokens(doc)
    return {c: dict(sorted(langs.items())) for c, langs in report.items()}


def route(
    docs: Iterable[Document], out_dir: str | os.PathLike, shard: int = 0, write_report: bool = True
) -> dict:
    """Write survivors to ``out/<corpus>/<lang>/<shard>.jsonl.gz``; returns the counts report.

    Documents are written in id order, so the output does not depend on
    input order.
    """
    out = Path(out_dir)
    groups: dict[tuple[str, str], list[Document]] = defaultdict(list)
    for doc in docs:
        groups[(corpus_of(doc), doc.lang)].append(doc)
    for (corpus, lang), members in sorted(groups.items()):
        members.sort(key=lambda d: d.id)
        write_jsonl(out / corpus / (lang or "und") / f"{shard:05d}.jsonl.gz", members)
    report = domain_report(d for members in groups.values() for d in members)
    if write_report:
        save_report(out / REPORT_NAME, report)
    return report


def merge_reports(reports: Iterable[dict]) -> dict:
    merged: dict[str, dict[str, dict[str, int]]] = {c: {} for c in CORPORA}
    for rep in reports:
        for corpus, langs in rep.items():
            for lang, cell in langs.items():
                tgt = merged.setdefault(corpus, {}).setdefault(lang, {"docs": 0, "tokens": 0})
                tgt["docs"] += cell["docs"]
                tgt["tokens"] += cell["tokens"]
    return {c: dict(sorted(langs.items())) for c, langs in merged.items()}


def save_report(path: str | os.PathLike, report: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def format_report(report: dict) -> str:
    """Plain-text table: corpus, language, documents, tokens."""
    rows = [("corpus", "lang", "docs", "tokens")]
    for corpus in CORPORA + tuple(c for c in report if c not in CORPORA):
        for lang, cell in report.get(corpus, {}).items():
            rows.append((corpus, lang, str(cell["docs"]), str(cell["tokens"])))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)
