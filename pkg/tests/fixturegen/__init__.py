"""Seeded synthetic corpora for the test suite.

Every builder takes a seed and is deterministic; nothing here depends on
the package under test except the plain data classes it emits.
"""

from __future__ import annotations

import io
import random
from dataclasses import dataclass, field

from lpdata.classifier import LabeledExample
from lpdata.corpus import Document

from .pools import (
    BOILERPLATE_EN,
    BOILERPLATE_KO,
    DOMAIN_POOLS,
    EN_GENERAL,
    LANG_POOLS,
    SPAM,
)

_JOIN = {"ja": "", "th": " "}
# sentences per line; single short sentences would trip the short-line rule
_PER_LINE = {"en": (1, 2), "de": (1, 2), "ko": (2, 3), "ja": (2, 3), "th": (2, 3)}


def make_line(rng: random.Random, pool: list[str], lang: str = "en", max_sentences: int = 2) -> str:
    k = rng.randint(1, max_sentences)
    return _JOIN.get(lang, " ").join(rng.sample(pool, k))


def _lines_from(rng: random.Random, sentences: list[str], lang: str) -> list[str]:
    lo, hi = _PER_LINE.get(lang, (1, 2))
    lines, i = [], 0
    while i < len(sentences):
        k = rng.randint(lo, hi)
        lines.append(_JOIN.get(lang, " ").join(sentences[i : i + k]))
        i += k
    return lines


def make_doc(rng: random.Random, lang: str = "en", n_lines: int | None = None, pool: list[str] | None = None) -> str:
    """Lines of distinct pool sentences, so no sentence repeats in a document."""
    pool = pool or LANG_POOLS[lang]
    n = n_lines or rng.randint(6, 9)
    lo, hi = _PER_LINE.get(lang, (1, 2))
    sentences = rng.sample(pool, min(len(pool), n * (lo + hi) // 2))
    return "\n".join(_lines_from(rng, sentences, lang)[:n])


def lang_docs(lang: str, n: int, seed: int) -> list[str]:
    rng = random.Random(f"lang:{lang}:{seed}")
    return [make_doc(rng, lang) for _ in range(n)]


def domain_doc(rng: random.Random, label: str) -> str:
    """Mostly on-topic sentences with an occasional general-interest one."""
    n = rng.randint(9, 14)
    if label == "other":
        sentences = rng.sample(EN_GENERAL, n)
    else:
        k = sum(rng.random() < 0.15 for _ in range(n))
        sentences = rng.sample(DOMAIN_POOLS[label], n - k) + rng.sample(EN_GENERAL, k)
        rng.shuffle(sentences)
    return "\n".join(_lines_from(rng, sentences, "en"))


def domain_docs(label: str, n: int, seed: int) -> list[str]:
    rng = random.Random(f"domain:{label}:{seed}")
    return [domain_doc(rng, label) for _ in range(n)]


_SPAM_WORDS = (
    "free click now win cash prize cheap deal bonus offer limited hot best top "
    "lol omg u wow amazing guaranteed instant fast easy money pills casino"
).split()


def spam_doc(rng: random.Random) -> str:
    lines = []
    for _ in range(rng.randint(6, 9)):
        if rng.random() < 0.5:
            lines.append(rng.choice(SPAM))
        else:
            words = " ".join(rng.choice(_SPAM_WORDS) for _ in range(rng.randint(8, 14)))
            lines.append(words + rng.choice(("!", "!!", ".", "")))
    return "\n".join(lines)


def spam_docs(n: int, seed: int) -> list[str]:
    rng = random.Random(f"spam:{seed}")
    return [spam_doc(rng) for _ in range(n)]


def good_docs(n: int, seed: int) -> list[str]:
    """Encyclopedic-register English drawn from every topical pool."""
    rng = random.Random(f"good:{seed}")
    labels = sorted(DOMAIN_POOLS)
    return [domain_doc(rng, rng.choice(labels)) for _ in range(n)]


# ---------------------------------------------------------------------------
# classifier training sets


def langid_examples(n_per_lang: int, seed: int, langs=("en", "ko", "ja", "th", "de")) -> list[LabeledExample]:
    out = []
    for lang in langs:
        rng = random.Random(f"langid:{lang}:{seed}")
        for _ in range(n_per_lang):
            # short and long samples so the model sees both
            text = make_doc(rng, lang, n_lines=rng.randint(1, 6))
            out.append(LabeledExample(text.replace("\n", " "), lang))
    return out


def quality_examples(n_per_class: int, seed: int) -> list[LabeledExample]:
    pos = good_docs(n_per_class, seed) + [
        d for lang in ("ko", "ja", "th") for d in lang_docs(lang, n_per_class // 3, seed)
    ]
    neg = spam_docs(len(pos), seed)
    return [LabeledExample(t, "positive") for t in pos] + [LabeledExample(t, "negative") for t in neg]


def domain_examples(n_per_class: int, seed: int, other_langs=("ko", "ja", "th")) -> list[LabeledExample]:
    """Topical English per label; "other" also carries general text in ``other_langs``."""
    out = [
        LabeledExample(t, label)
        for label in sorted(DOMAIN_POOLS)
        for t in domain_docs(label, n_per_class, seed)
    ]
    for lang in other_langs:
        out.extend(LabeledExample(t, "other") for t in lang_docs(lang, n_per_class // 2, seed + 1))
    return out


# ---------------------------------------------------------------------------
# line-dedup corpus

EN_PLANTED = dict(zip(BOILERPLATE_EN, (20, 15, 12, 10, 8)))
KO_PLANTED = dict(zip(BOILERPLATE_KO, (19, 14, 11, 9, 7)))


def boilerplate_corpus(seed: int, pages: int = 30) -> tuple[list[Document], dict[str, int]]:
    """Two sites whose pages carry planted template lines at known counts."""
    rng = random.Random(f"boiler:{seed}")
    docs = []
    for site, key, lang, planted in (
        ("news.example.com", "example.com", "en", EN_PLANTED),
        ("blog.example.co.kr", "example.co.kr", "ko", KO_PLANTED),
    ):
        carriers = {line: set(rng.sample(range(pages), count)) for line, count in planted.items()}
        for i in range(pages):
            lines = [make_line(rng, LANG_POOLS[lang], lang, 3) for _ in range(8)]
            for line, pages_with in carriers.items():
                if i in pages_with:
                    lines.insert(rng.randint(0, len(lines)), line)
            docs.append(
                Document(id=f"{lang}-{i:03d}", url=f"https://{site}/p/{i}", domain_key=key, lang=lang,
                         text="\n".join(lines))
            )
    return docs, {**EN_PLANTED, **KO_PLANTED}


def random_line_corpus(rng: random.Random) -> list[Document]:
    """Small corpus with heavy line reuse inside and across a few domains."""
    vocab = [f"line {i} " + "x" * rng.randint(0, 12) for i in range(rng.randint(5, 40))]
    domains = [f"site{i}.example" for i in range(rng.randint(1, 5))]
    docs = []
    for i in range(rng.randint(5, 60)):
        dom = rng.choice(domains)
        lines = [rng.choice(vocab) for _ in range(rng.randint(1, 10))]
        docs.append(Document(id=f"d{i}", domain_key=dom, text="\n".join(lines)))
    return docs


# ---------------------------------------------------------------------------
# near-duplicate corpus


def perturb(rng: random.Random, text: str, edits: int = 1, lang: str = "en") -> str:
    """Replace ``edits`` random words (characters in ja/th) with fresh ones."""
    if lang in ("ja", "th"):
        chars = list(text)
        spots = [i for i, c in enumerate(chars) if not c.isspace()]
        for _ in range(edits):
            chars[rng.choice(spots)] = "ก" if lang == "th" else "変"
        return "".join(chars)
    words = text.split(" ")
    for _ in range(edits):
        i = rng.randrange(len(words))
        words[i] = f"variant{rng.randrange(10**6)}"
    return " ".join(words)


@dataclass
class DupCorpus:
    docs: list[Document]
    pairs: list[tuple[str, str]] = field(default_factory=list)


def planted_dup_corpus(seed: int, originals: int = 100, dups: int = 100) -> DupCorpus:
    """``originals`` distinct documents plus ``dups`` one-word edits of some of them."""
    rng = random.Random(f"dups:{seed}")
    pools = ["en", "ko", "de"] + sorted(DOMAIN_POOLS)
    texts = []
    for i in range(originals):
        kind = pools[i % len(pools)]
        if kind in DOMAIN_POOLS:
            texts.append(domain_doc(rng, kind))
        else:
            texts.append(make_doc(rng, kind, n_lines=10))
    docs = [Document(id=f"orig{i:03d}", text=t) for i, t in enumerate(texts)]
    pairs = []
    for j in range(dups):
        src = j % originals
        dup = Document(id=f"dup{j:03d}", text=perturb(rng, texts[src], rng.randint(1, 2)))
        docs.append(dup)
        pairs.append((docs[src].id, dup.id))
    return DupCorpus(docs, pairs)


# ---------------------------------------------------------------------------
# LM fixtures


def lm_fixture_sentences() -> list[str]:
    """Ten tiny sentences for the add-one bigram oracle."""
    return [
        "the cat sat on the mat",
        "the dog sat on the log",
        "a cat saw a dog",
        "the mat was red",
        "a dog ran home",
        "the cat ran to the dog",
        "on the log sat a cat",
        "the red dog saw the mat",
        "a log was on the mat",
        "the dog was home",
    ]


# ---------------------------------------------------------------------------
# WARC fixture


def _html(title: str, body_lines: list[str], lang: str, charset: str = "utf-8") -> bytes:
    paras = "\n".join(f"<p>{line}</p>" for line in body_lines)
    page = (
        f'<!DOCTYPE html><html lang="{lang}"><head><meta charset="{charset}"><title>{title}</title>'
        "<script>var tracker = {id: 1};</script><style>p { margin: 0 }</style></head>"
        f"<body><nav><a href='/'>Home</a> | <a href='/about'>About</a></nav><main>{paras}</main>"
        "<footer>Copyright notice and contact links</footer></body></html>"
    )
    return page.encode(charset)


@dataclass
class WarcPlan:
    """What the fixture WARC contains, for assertions."""

    responses: int = 0
    html_ok: int = 0
    non_html: int = 0
    not_found: int = 0
    blocked: int = 0
    dup_pairs: list[tuple[str, str]] = field(default_factory=list)
    blocked_domain: str = "spam-farm.example"


SITES = {
    "en": ["daily.example.com", "notes.example.org"],
    "ko": ["news.example.co.kr", "cafe.example.co.kr"],
    "ja": ["blog.example.co.jp", "shop.example.jp"],
    "th": ["news.example.co.th", "travel.example.in.th"],
    "de": ["zeitung.example.de"],
}
BOILER = {"en": BOILERPLATE_EN[:2], "ko": BOILERPLATE_KO[:2]}


def build_warc(path, seed: int = 0, total: int = 200) -> WarcPlan:
    """Write a gzip WARC with ``total`` response records plus request and
    metadata records. Mix: multilingual pages carrying site boilerplate,
    topical English pages, spam, near-duplicates, non-HTML bodies, 404s and
    pages on a blocked domain."""
    from warcio.statusandheaders import StatusAndHeaders
    from warcio.warcwriter import WARCWriter

    rng = random.Random(f"warc:{seed}")
    plan = WarcPlan()
    pages: list[tuple[str, int, str, bytes]] = []  # url, status, content type, body

    def add_page(lang: str, text_lines: list[str], site: str, n: int) -> str:
        url = f"https://{site}/{lang}/{n}.html"
        extra = BOILER.get(lang, [])
        lines = list(text_lines)
        for b in extra:
            lines.insert(rng.randint(0, len(lines)), b)
        pages.append((url, 200, "text/html; charset=utf-8", _html(f"Page {n}", lines, lang)))
        return url

    originals = []
    n = 0
    for lang in ("en", "ko", "ja", "th"):
        for i in range(26):
            lines = make_doc(rng, lang, n_lines=rng.randint(7, 10)).split("\n")
            url = add_page(lang, lines, SITES[lang][i % 2], n)
            originals.append((lang, lines, url))
            n += 1
    for label in ("finance", "law", "medical"):
        for i in range(10):
            add_page("en", domain_doc(rng, label).split("\n"), f"{label}.example.com", n)
            n += 1
    for i in range(6):
        add_page("de", make_doc(rng, "de", n_lines=8).split("\n"), SITES["de"][0], n)
        n += 1
    for i in range(10):
        add_page("en", spam_doc(rng).split("\n"), "promo.example.net", n)
        n += 1
    # near-duplicates: same site, one-word edits
    for lang, lines, src_url in rng.sample(originals, 16):
        edited = perturb(rng, "\n".join(lines), lang=lang).split("\n")
        site = src_url.split("/")[2]
        url = add_page(lang, edited, site, n)
        plan.dup_pairs.append((src_url, url))
        n += 1
    html_ok = len(pages)
    for i in range(8):
        pages.append((f"https://files.example.com/doc{i}.pdf", 200, "application/pdf", b"%PDF-1.4 fake"))
    for i in range(6):
        pages.append((f"https://daily.example.com/missing/{i}", 404, "text/html", b"<html>Not Found</html>"))
    for i in range(total - html_ok - 14):
        lines = make_doc(rng, "en").split("\n")
        pages.append(
            (f"https://www.{plan.blocked_domain}/{i}", 200, "text/html", _html("x", lines, "en"))
        )
    plan.blocked = total - html_ok - 14
    plan.html_ok, plan.non_html, plan.not_found = html_ok, 8, 6
    plan.responses = len(pages)
    rng.shuffle(pages)

    with open(path, "wb") as raw:
        writer = WARCWriter(raw, gzip=True)
        writer.write_record(writer.create_warcinfo_record("fixture.warc.gz", {"software": "fixturegen"}))
        for i, (url, status, ctype, body) in enumerate(pages):
            if i % 20 == 0:
                req = writer.create_warc_record(
                    url, "request", payload=io.BytesIO(b""),
                    http_headers=StatusAndHeaders("GET / HTTP/1.1", [("Host", url.split("/")[2])], is_http_request=True),
                )
                writer.write_record(req)
            reason = {200: "OK", 404: "Not Found"}[status]
            headers = StatusAndHeaders(f"{status} {reason}", [("Content-Type", ctype)], protocol="HTTP/1.1")
            rec = writer.create_warc_record(url, "response", payload=io.BytesIO(body), http_headers=headers)
            writer.write_record(rec)
    return plan


# ---------------------------------------------------------------------------
# LM corpora: a tiny template grammar with Zipf-weighted slot fillers, so
# n-gram counts have a natural long tail


_ENC_SLOTS = {
    "adj": "ancient northern coastal famous large small early modern royal eastern western central historic rural".split(),
    "noun": "city river temple bridge library museum harbor castle railway university cathedral market valley fortress monastery".split(),
    "noun2": "charter treaty festival canal garden archive observatory academy printing press trade route dynasty".split(),
    "place": "Lisbon Kyoto Cairo Krakow Valparaiso Tbilisi Hanoi Antwerp Cusco Dubrovnik Samarkand Bergen Quebec Malacca Zanzibar".split(),
    "verb": "founded restored expanded described documented rebuilt governed surveyed financed designed".split(),
    "person": "Amara Tomas Ingrid Rafael Leila Henrik Soraya Mateo Yuki Dmitri Anika Bruno".split(),
    "role": "historian architect botanist cartographer astronomer engineer chronicler merchant composer physician".split(),
    "people": "scholars merchants pilgrims monks sailors farmers craftsmen traders".split(),
}
_ENC_TEMPLATES = [
    "The {adj} {noun} of {place} was {verb} in the {century} century.",
    "{place} is known for its {adj} {noun} and its {noun2}.",
    "In {year}, {person} {verb} the {noun2} near the {noun}.",
    "{person} was a {role} who {verb} the {adj} {noun} of {place}.",
    "The {noun} of {name} was {verb} by {person} {name} in {year}.",
    "According to {name}, the {people} of {place} {verb} a {adj} {noun2}.",
    "The {noun2} attracted {people} from across the region.",
    "Records show that {people} {verb} the {noun} during the {century} century.",
    "The {adj} {noun2} of {place} remains an important site for {people}.",
    "Historians note that the {noun} was {verb} after a long dispute over the {noun2}.",
]
_SPAM_SLOTS = {
    "hype": "omg wow amazing insane crazy unbelievable shocking epic huge massive".split(),
    "thing": "deal prize bonus offer discount gift voucher jackpot reward giveaway coupon".split(),
    "act": "click tap claim grab win get unlock download join".split(),
    "money": "$500 $1000 cash money dollars bitcoin credits spins".split(),
    "when": "now today tonight instantly fast asap".split(),
    "bait": "singles pills loans watches followers likes".split(),
}
_SPAM_TEMPLATES = [
    "{hype} {hype} {act} here {when} for your free {thing}!!!",
    "{act} {when} and {act} {money} {when} lol",
    "{hype} {thing} {thing} {thing} only {when} {act} {act}",
    "cheap {bait} cheap {bait} best {thing} {when}",
    "u wont believe this {hype} {thing} {act} the link {when}",
    "earn {money} a day from home {hype} {thing} guaranteed",
    "{act} your {thing} {when} before its gone {hype}!!",
    "hot {bait} want to meet u {when} {act} here",
    "{act} {junk} {junk} {when} free {thing} {junk}",
    "visit {junk}.biz for {hype} {bait} {money}!!!",
]


_SYLLABLES = "ka ro mi te lu sa vo ne ri da po ki ma zu le ta".split()


def _coined(rng: random.Random) -> str:
    """An open-class word: most are rare, a few recur."""
    return "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4)))


def _zipf_choice(rng: random.Random, words: list[str]) -> str:
    return rng.choices(words, weights=[1.0 / (i + 1) for i in range(len(words))])[0]


_TAILS: dict[str, list[str]] = {}


def _slot_words(key: str, base: list[str]) -> list[str]:
    """Base fillers followed by a fixed tail of coined ones, for Zipf sampling."""
    if key not in _TAILS:
        trng = random.Random(f"tail:{key}")
        _TAILS[key] = [_coined(trng) for _ in range(150)]
    return base + _TAILS[key]


def _fill(rng: random.Random, template: str, slots: dict[str, list[str]]) -> str:
    out = template
    while "{" in out:
        start = out.index("{")
        end = out.index("}", start)
        key = out[start + 1 : end]
        if key == "year":
            val = str(rng.randint(1100, 1950))
        elif key == "name":
            val = _coined(rng).capitalize()
        elif key == "junk":
            val = _coined(rng) + str(rng.randint(1, 999))
        elif key == "century":
            val = _zipf_choice(rng, "twelfth thirteenth fourteenth fifteenth sixteenth seventeenth".split())
        else:
            val = _zipf_choice(rng, _slot_words(key, slots[key]))
        out = out[:start] + val + out[end + 1 :]
    return out[0].upper() + out[1:]


def encyclopedic_doc(rng: random.Random) -> str:
    n = rng.randint(6, 10)
    return "\n".join(_fill(rng, _zipf_choice(rng, _ENC_TEMPLATES), _ENC_SLOTS) for _ in range(n))


def clickbait_doc(rng: random.Random) -> str:
    n = rng.randint(6, 10)
    return "\n".join(_fill(rng, _zipf_choice(rng, _SPAM_TEMPLATES), _SPAM_SLOTS) for _ in range(n))


def lm_corpora(n: int, seed: int) -> tuple[list[str], list[str]]:
    """(good, bad) document texts for the dual-perplexity labeling loop."""
    rng = random.Random(f"lm:{seed}")
    good = [encyclopedic_doc(rng) for _ in range(n)]
    bad = [clickbait_doc(rng) for _ in range(n)]
    return good, bad
