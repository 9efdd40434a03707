"""Main-text extraction from raw HTML bytes."""

from __future__ import annotations

import codecs
import re
from html.parser import HTMLParser

from lpdata.corpus import split_lines

SKIP_TAGS = frozenset(
    {
        "script", "style", "nav", "header", "footer", "aside", "form", "noscript",
        "head", "template", "svg", "iframe", "select",
    }
)
BLOCK_TAGS = frozenset(
    {
        "address", "article", "blockquote", "body", "br", "caption", "center", "dd",
        "details", "dialog", "div", "dl", "dt", "fieldset", "figcaption", "figure",
        "h1", "h2", "h3", "h4", "h5", "h6", "hr", "html", "li", "main", "ol", "p",
        "pre", "section", "summary", "table", "tbody", "tfoot", "thead", "title",
        "tr", "ul",
    }
)
CELL_TAGS = frozenset({"td", "th"})
VOID_TAGS = frozenset(
    {"area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "source", "track", "wbr"}
)

_META_CHARSET = re.compile(rb"""<meta[^>]+charset\s*=\s*["']?\s*([A-Za-z0-9_.:-]+)""", re.IGNORECASE)
_CONTROL = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")
_SPACES = re.compile(r"[ \t\f\v\r\u00a0\u2000-\u200b\u3000]+")
_TAGLIKE = re.compile(r"<(?=/|script)", re.IGNORECASE)


class _TextParser(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self.skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in SKIP_TAGS:
            if tag not in VOID_TAGS:
                self.skip += 1
            return
        if self.skip:
            return
        if tag in BLOCK_TAGS:
            self.parts.append("\n")
        elif tag in CELL_TAGS:
            self.parts.append(" ")

    def handle_startendtag(self, tag, attrs):
        if not self.skip and tag in BLOCK_TAGS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in SKIP_TAGS:
            if self.skip:
                self.skip -= 1
            return
        if self.skip:
            return
        if tag in BLOCK_TAGS:
            self.parts.append("\n")
        elif tag in CELL_TAGS:
            self.parts.append(" ")

    def handle_data(self, data):
        if not self.skip:
            self.parts.append(data.replace("\n", " "))


def decode_html(html: bytes, declared_charset: str | None = None) -> str:
    """Decode using the declared charset, then a <meta> charset, then UTF-8."""
    candidates = [declared_charset]
    m = _META_CHARSET.search(html[:4096])
    if m:
        candidates.append(m.group(1).decode("ascii", "ignore"))
    for name in candidates:
        if not name:
            continue
        try:
            codec = codecs.lookup(name.strip())
        except LookupError:
            continue
        try:
            return html.decode(codec.name)
        except UnicodeDecodeError:
            continue
    return html.decode("utf-8", errors="replace")


def extract(html: bytes, declared_charset: str | None = None) -> tuple[str, str | None]:
    """Return (text, reason); reason is set when nothing usable came out."""
    if not html:
        return "", "empty_html"
    try:
        markup = decode_html(html, declared_charset)
    except (UnicodeError, LookupError):
        return "", "undecodable"
    parser = _TextParser()
    try:
        parser.feed(markup)
        parser.close()
    except (AssertionError, ValueError):
        # HTMLParser gives up on some pathological markup; keep what it saw
        pass
    raw = "".join(parser.parts)
    raw = _CONTROL.sub("", raw)
    raw = _TAGLIKE.sub("< ", raw)
    lines = [_SPACES.sub(" ", line) for line in raw.split("\n")]
    text = "\n".join(split_lines("\n".join(lines)))
    if not text:
        return "", "empty_text"
    return text, None


def extract_text(html: bytes, declared_charset: str | None = None) -> str:
    """Visible main text of an HTML page, one block per line."""
    return extract(html, declared_charset)[0]
