"""Document language identification and target-language filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

from lpdata.classifier import ClassifierModel, predict
from lpdata.corpus import Document, FilterOutcome

STAGE = "langid"


@dataclass
class LangIdConfig:
    target_langs: frozenset[str] = field(default_factory=lambda: frozenset({"en", "ko", "ja", "th"}))
    min_score: float = 0.65
    sample_chars: int = 4000

    def __post_init__(self) -> None:
        self.target_langs = frozenset(self.target_langs)
        if not 0 <= self.min_score <= 1:
            raise ValueError("min_score must be in [0, 1]")
        if self.sample_chars < 1:
            raise ValueError("sample_chars must be positive")

    def validate_against(self, model: ClassifierModel) -> None:
        missing = self.target_langs - set(model.labels)
        if missing:
            raise ValueError(f"target languages not in model labels: {sorted(missing)}")


def identify(model: ClassifierModel, doc: Document, cfg: LangIdConfig) -> Document:
    """Set ``lang``/``lang_score`` from the text prefix; empty text is dropped."""
    sample = doc.text[: cfg.sample_chars].replace("\n", " ")
    if not sample.strip():
        doc.lang, doc.lang_score = "", 0.0
        doc.filter = FilterOutcome.drop(STAGE, "empty_text")
        return doc
    label, prob = predict(model, sample)[0]
    doc.lang, doc.lang_score = label, prob
    return doc


def filter_language(doc: Document, cfg: LangIdConfig) -> FilterOutcome:
    if doc.filter is not None and not doc.filter.kept and doc.filter.stage == STAGE:
        return doc.filter
    if doc.lang not in cfg.target_langs:
        return FilterOutcome.drop(STAGE, "lang_not_target")
    if doc.lang_score < cfg.min_score:
        return FilterOutcome.drop(STAGE, "lang_low_confidence")
    return FilterOutcome.keep(STAGE)
