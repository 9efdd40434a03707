"""Backoff n-gram language models in ARPA form, plus dual-perplexity labeling.

Training uses interpolated modified Kneser-Ney (three discounts per order
estimated from counts-of-counts of the adjusted counts, as in KenLM) and
falls back to add-k smoothing when the discount estimates are unusable.
Interpolated estimates are stored in backoff form: each stored n-gram
carries its interpolated probability and each context carries its
interpolation weight as the backoff weight, so ARPA readers reproduce the
same distribution.

Conventions:
  * tokens are the lowercased ``tokenize_words`` output of one line;
  * models of order >= 2 wrap every sentence in ``<s> ... </s>`` and score
    ``</s>``; unigram models have no sentence context and use no markers;
  * the vocabulary that is predicted is every training word, ``</s>`` (when
    markers are used) and ``<unk>``; ``<s>`` is only ever a context;
  * zero probabilities are stored as log10 = -99 so scores stay finite.
"""

from __future__ import annotations

import io
import math
import os
from collections import Counter, defaultdict
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from lpdata.classifier import LabeledExample
from lpdata.corpus import Document, split_lines, tokenize_words

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LOG_ZERO = -99.0
MAX_ADDK_ENTRIES = 20_000_000
MIN_KN_TOKENS = 1000

Ngram = tuple[str, ...]


class ArpaParseError(ValueError):
    def __init__(self, lineno: int, detail: str):
        super().__init__(f"arpa_parse_error: line {lineno}: {detail}")
        self.lineno = lineno


@dataclass(eq=False)
class NgramModel:
    order: int
    # tables[n-1]: n-gram -> (log10 prob, log10 backoff)
    tables: list[dict[Ngram, tuple[float, float]]]
    markers: bool = True
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def vocab(self) -> dict[str, int]:
        return {g[0]: i for i, g in enumerate(self.tables[0])}

    def predicted_vocab(self) -> list[str]:
        return [g[0] for g in self.tables[0] if g[0] != BOS]

    def log10_prob(self, word: str, context: Sequence[str] = ()) -> float:
        """log10 p(word | context) with backoff; unknown words map to ``<unk>``."""
        if (word,) not in self.tables[0]:
            word = UNK
        ctx = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        ctx = tuple(t if (t,) in self.tables[0] else UNK for t in ctx)
        backoff = 0.0
        for start in range(len(ctx) + 1):
            h = ctx[start:]
            entry = self.tables[len(h)].get(h + (word,))
            if entry is not None:
                return entry[0] + backoff
            if h:
                hist = self.tables[len(h) - 1].get(h)
                if hist is not None:
                    backoff += hist[1]
        return LOG_ZERO + backoff

    def score_tokens(self, tokens: Sequence[str]) -> tuple[float, int]:
        """(total log10 prob, number of scored tokens) for one sentence."""
        seq = list(tokens) + ([EOS] if self.markers else [])
        ctx = [BOS] if self.markers else []
        total = 0.0
        for tok in seq:
            total += self.log10_prob(tok, ctx)
            ctx.append(tok)
        return total, len(seq)


def lm_tokens(line: str, lang: str = "") -> list[str]:
    return [w.lower() for w in tokenize_words(line, lang)]


def sentences_from_text(text: str, lang: str = "") -> list[list[str]]:
    """One token list per non-empty line."""
    return [toks for toks in (lm_tokens(ln, lang) for ln in split_lines(text)) if toks]


def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else LOG_ZERO


# ---------------------------------------------------------------------------
# training


def _padded(sentences: Iterable[Sequence[str]], markers: bool) -> list[list[str]]:
    out = []
    for s in sentences:
        toks = [t for t in s if t not in (BOS, EOS)]
        if markers:
            out.append([BOS] + toks + [EOS])
        elif toks:
            out.append(toks)
    return out


def _raw_counts(padded: list[list[str]], order: int) -> list[Counter]:
    counts = [Counter() for _ in range(order)]
    for sent in padded:
        for n in range(1, order + 1):
            c = counts[n - 1]
            for i in range(len(sent) - n + 1):
                c[tuple(sent[i : i + n])] += 1
    counts[0].pop((BOS,), None)
    return counts


def _vocab(padded: list[list[str]], markers: bool) -> list[str]:
    words = sorted({t for s in padded for t in s if t not in (BOS, EOS)})
    return words + ([EOS] if markers else []) + [UNK]


def _discounts(adjusted: Counter) -> tuple[float, float, float] | None:
    coc = Counter(c for c in adjusted.values() if c <= 4)
    t1, t2, t3, t4 = (coc.get(k, 0) for k in (1, 2, 3, 4))
    if min(t1, t2, t3, t4) == 0:
        return None
    y = t1 / (t1 + 2 * t2)
    d = (1 - 2 * y * t2 / t1, 2 - 3 * y * t3 / t2, 3 - 4 * y * t4 / t3)
    if not (0 < d[0] < 1 and 0 < d[1] < 2 and 0 < d[2] < 3):
        return None
    return d


def _train_kn(padded: list[list[str]], order: int, markers: bool, vocab: list[str]):
    raw = _raw_counts(padded, order)
    adjusted: list[Counter] = [Counter() for _ in range(order)]
    adjusted[order - 1] = raw[order - 1]
    for n in range(order - 1, 0, -1):
        cont = Counter()
        for g in raw[n]:
            cont[g[1:]] += 1
        adj = adjusted[n - 1]
        for g, c in raw[n - 1].items():
            adj[g] = c if g[0] == BOS else cont[g]
    discounts = []
    for n in range(order):
        d = _discounts(adjusted[n])
        if d is None:
            return None
        discounts.append(d)

    def disc(n: int, c: int) -> float:
        return discounts[n][min(c, 3) - 1]

    # per-context totals and interpolation weights
    ctx_total: list[dict[Ngram, float]] = []
    ctx_gamma: list[dict[Ngram, float]] = []
    for n in range(order):
        tot: dict[Ngram, float] = defaultdict(float)
        dsum: dict[Ngram, float] = defaultdict(float)
        for g, c in adjusted[n].items():
            tot[g[:-1]] += c
            dsum[g[:-1]] += disc(n, c)
        ctx_total.append(dict(tot))
        ctx_gamma.append({h: dsum[h] / tot[h] for h in tot})

    probs: list[dict[Ngram, float]] = []
    uni: dict[Ngram, float] = {}
    total0 = ctx_total[0][()]
    gamma0 = ctx_gamma[0][()]
    uniform = 1.0 / len(vocab)
    for w in vocab:
        c = adjusted[0].get((w,), 0)
        uni[(w,)] = (max(c - disc(0, c), 0.0) if c else 0.0) / total0 + gamma0 * uniform
    probs.append(uni)
    for n in range(1, order):
        table: dict[Ngram, float] = {}
        lower = probs[n - 1]
        for g, c in adjusted[n].items():
            h = g[:-1]
            table[g] = (c - disc(n, c)) / ctx_total[n][h] + ctx_gamma[n][h] * lower[g[1:]]
        probs.append(table)

    tables: list[dict[Ngram, tuple[float, float]]] = []
    for n in range(order):
        gammas = ctx_gamma[n + 1] if n + 1 < order else {}
        t = {}
        if n == 0 and markers:
            t[(BOS,)] = (LOG_ZERO, _log10(gammas[(BOS,)]) if (BOS,) in gammas else 0.0)
        for g, p in probs[n].items():
            t[g] = (_log10(p), _log10(gammas[g]) if g in gammas else 0.0)
        tables.append(t)
    meta = {"discounts": ";".join(",".join(f"{x:.6f}" for x in d) for d in discounts)}
    return tables, meta


def _train_addk(padded: list[list[str]], order: int, markers: bool, vocab: list[str], k: float):
    raw = _raw_counts(padded, order)
    size = len(vocab)
    tables: list[dict[Ngram, tuple[float, float]]] = []
    total = sum(raw[0].values())
    uni = {}
    if markers:
        uni[(BOS,)] = (LOG_ZERO, 0.0)
    for w in vocab:
        uni[(w,)] = (_log10((raw[0].get((w,), 0) + k) / (total + k * size)), 0.0)
    tables.append(uni)
    for n in range(2, order + 1):
        ctx_count: Counter = Counter()
        for g, c in raw[n - 1].items():
            ctx_count[g[:-1]] += c
        if k > 0 and len(ctx_count) * size > MAX_ADDK_ENTRIES:
            raise ValueError("add_k_table_too_large")
        t: dict[Ngram, tuple[float, float]] = {}
        for h in sorted(ctx_count):
            denom = ctx_count[h] + k * size
            if k > 0:
                for w in vocab:
                    t[h + (w,)] = (_log10((raw[n - 1].get(h + (w,), 0) + k) / denom), 0.0)
            else:
                for w in vocab:
                    c = raw[n - 1].get(h + (w,), 0)
                    if c:
                        t[h + (w,)] = (_log10(c / denom), 0.0)
        tables.append(t)
    if k == 0:
        # unsmoothed: a seen context gives no mass to unseen words
        for t in tables[:-1]:
            for g, (p, _) in t.items():
                t[g] = (p, LOG_ZERO)
    return tables


def train_lm(
    sentences: Iterable[Sequence[str]],
    order: int = 3,
    smoothing: str = "kneser_ney",
    add_k: float = 0.5,
    lang: str = "",
) -> NgramModel:
    """Train from token lists (one per sentence)."""
    if not 1 <= order <= 5:
        raise ValueError("order must be in 1..5")
    if smoothing not in ("kneser_ney", "add_k"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    if add_k < 0:
        raise ValueError("add_k must be >= 0")
    markers = order >= 2
    padded = _padded(sentences, markers)
    n_tokens = sum(len(s) - (2 if markers else 0) for s in padded)
    if n_tokens == 0:
        raise ValueError("empty_corpus")
    vocab = _vocab(padded, markers)
    meta = {"smoothing": smoothing, "order": str(order)}
    if lang:
        meta["lang"] = lang
    if smoothing == "kneser_ney":
        trained = _train_kn(padded, order, markers, vocab) if n_tokens >= MIN_KN_TOKENS else None
        if trained is not None:
            tables, extra = trained
            meta.update(extra)
            return _finish(NgramModel(order, tables, markers, meta))
        meta["fallback"] = "add_k=0.5"
        add_k = 0.5
    else:
        meta["add_k"] = repr(add_k)
    tables = _train_addk(padded, order, markers, vocab, add_k)
    return _finish(NgramModel(order, tables, markers, meta))


def _finish(model: NgramModel) -> NgramModel:
    model.tables = [dict(sorted(t.items())) for t in model.tables]
    return model


# ---------------------------------------------------------------------------
# ARPA I/O


def write_arpa(model: NgramModel, path) -> None:
    """Write ARPA text to a path or text file object (byte-stable output)."""
    buf = io.StringIO()
    for key in sorted(model.meta):
        buf.write(f"# {key}={model.meta[key]}\n")
    buf.write("\n\\data\\\n")
    for n, t in enumerate(model.tables, 1):
        buf.write(f"ngram {n}={len(t)}\n")
    for n, t in enumerate(model.tables, 1):
        buf.write(f"\n\\{n}-grams:\n")
        highest = n == model.order
        for g, (p, bo) in t.items():
            line = f"{p!r}\t{' '.join(g)}"
            if not highest and bo != 0.0:
                line += f"\t{bo!r}"
            buf.write(line + "\n")
    buf.write("\n\\end\\\n")
    text = buf.getvalue()
    if hasattr(path, "write"):
        path.write(text)
        return
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_arpa(path) -> NgramModel:
    if hasattr(path, "read"):
        lines = path.read().splitlines()
    else:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta: dict[str, str] = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "\\data\\":
        s = lines[i].strip()
        if s.startswith("#") and "=" in s:
            k, _, v = s[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        i += 1
    if i == len(lines):
        raise ArpaParseError(i, "missing \\data\\ header")
    i += 1
    declared: dict[int, int] = {}
    while i < len(lines) and lines[i].strip().startswith("ngram "):
        try:
            n, cnt = lines[i].strip()[6:].split("=")
            declared[int(n)] = int(cnt)
        except ValueError:
            raise ArpaParseError(i + 1, f"bad count line {lines[i]!r}") from None
        i += 1
    if not declared or sorted(declared) != list(range(1, len(declared) + 1)):
        raise ArpaParseError(i + 1, "bad or missing ngram counts")
    order = len(declared)
    tables: list[dict[Ngram, tuple[float, float]]] = [{} for _ in range(order)]
    current = None
    ended = False
    for j in range(i, len(lines)):
        s = lines[j].strip()
        if not s:
            continue
        if s == "\\end\\":
            ended = True
            break
        if s.startswith("\\") and s.endswith("-grams:"):
            try:
                current = int(s[1:-7])
            except ValueError:
                raise ArpaParseError(j + 1, f"bad section header {s!r}") from None
            if current not in declared:
                raise ArpaParseError(j + 1, f"undeclared section {s!r}")
            continue
        if s.startswith("\\"):
            raise ArpaParseError(j + 1, f"bad section header {s!r}")
        if current is None:
            raise ArpaParseError(j + 1, "n-gram entry outside a section")
        parts = s.split()
        if len(parts) not in (current + 1, current + 2):
            raise ArpaParseError(j + 1, f"expected {current}-gram entry")
        try:
            p = float(parts[0])
            bo = float(parts[current + 1]) if len(parts) == current + 2 else 0.0
        except ValueError:
            raise ArpaParseError(j + 1, "bad number") from None
        tables[current - 1][tuple(parts[1 : current + 1])] = (p, bo)
    if not ended:
        raise ArpaParseError(len(lines), "missing \\end\\ marker")
    for n, cnt in declared.items():
        if len(tables[n - 1]) != cnt:
            raise ArpaParseError(len(lines), f"{n}-gram count {len(tables[n - 1])} != declared {cnt}")
    if (UNK,) not in tables[0]:
        tables[0][(UNK,)] = (LOG_ZERO, 0.0)
    markers = (BOS,) in tables[0]
    return NgramModel(order, tables, markers, meta)


# ---------------------------------------------------------------------------
# scoring and labeling


@dataclass
class Perplexity:
    log10_prob_per_token: float
    perplexity: float
    token_count: int


def perplexity(model: NgramModel, text: str, lang: str = "") -> Perplexity:
    total, count = 0.0, 0
    for toks in sentences_from_text(text, lang):
        lp, n = model.score_tokens(toks)
        total += lp
        count += n
    if count == 0:
        raise ValueError("empty_text")
    per = total / count
    return Perplexity(per, 10.0 ** (-per), count)


@dataclass
class LabelingRule:
    good_ppl_max: float = 300.0
    bad_ppl_min: float = 600.0
    margin_mode: str = "both"
    ratio_min: float = 1.5

    def __post_init__(self) -> None:
        if self.margin_mode not in ("both", "ratio"):
            raise ValueError("margin_mode must be 'both' or 'ratio'")
        if self.margin_mode == "both" and not self.good_ppl_max < self.bad_ppl_min:
            raise ValueError("good_ppl_max must be below bad_ppl_min")

    def label(self, good_ppl: float, bad_ppl: float) -> str | None:
        if self.margin_mode == "both":
            if good_ppl <= self.good_ppl_max and bad_ppl >= self.bad_ppl_min:
                return "positive"
            if good_ppl >= self.bad_ppl_min and bad_ppl <= self.good_ppl_max:
                return "negative"
            return None
        if bad_ppl / good_ppl >= self.ratio_min:
            return "positive"
        if good_ppl / bad_ppl >= self.ratio_min:
            return "negative"
        return None


@dataclass
class ScoredDocument:
    doc_id: str
    good_ppl: float
    bad_ppl: float
    label: str | None


def score_documents(
    good: NgramModel, bad: NgramModel, docs: Iterable[Document], rule: LabelingRule
) -> Iterator[tuple[Document, ScoredDocument]]:
    g_lang, b_lang = good.meta.get("lang"), bad.meta.get("lang")
    if g_lang and b_lang and g_lang != b_lang:
        raise ValueError(f"models disagree on language: {g_lang} vs {b_lang}")
    for doc in docs:
        try:
            gp = perplexity(good, doc.text, doc.lang).perplexity
            bp = perplexity(bad, doc.text, doc.lang).perplexity
        except ValueError:
            yield doc, ScoredDocument(doc.id, math.inf, math.inf, None)
            continue
        yield doc, ScoredDocument(doc.id, gp, bp, rule.label(gp, bp))


def label_documents(
    good: NgramModel, bad: NgramModel, docs: Iterable[Document], rule: LabelingRule | None = None
) -> tuple[list[LabeledExample], int]:
    """Positive/negative training rows plus the number left unlabeled."""
    rule = rule or LabelingRule()
    examples, unlabeled = [], 0
    for doc, scored in score_documents(good, bad, docs, rule):
        if scored.label is None:
            unlabeled += 1
        else:
            examples.append(LabeledExample(doc.text, scored.label))
    return examples, unlabeled
