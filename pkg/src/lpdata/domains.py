"""Registered-domain (eTLD+1) lookup and URL blocklisting."""

from __future__ import annotations

import ipaddress
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from urllib.parse import urlsplit


class PublicSuffixList:
    """Rules of a public suffix list file (standard PSL text format)."""

    def __init__(self, lines):
        self.rules: set[str] = set()
        self.wildcards: set[str] = set()
        self.exceptions: set[str] = set()
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("//"):
                continue
            rule = line.split()[0].lower()
            if rule.startswith("!"):
                self.exceptions.add(rule[1:])
            elif rule.startswith("*."):
                self.wildcards.add(rule[2:])
            else:
                self.rules.add(rule)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> PublicSuffixList:
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    def suffix_length(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix; 0 if no rule matches."""
        n = len(labels)
        for i in range(n):
            if ".".join(labels[i:]) in self.exceptions:
                return n - i - 1
        for i in range(n):
            if ".".join(labels[i:]) in self.rules:
                return n - i
            if i + 1 < n and ".".join(labels[i + 1 :]) in self.wildcards:
                return n - i
        return 0

    def registered_domain(self, host: str) -> str | None:
        """eTLD+1 of ``host``, or None when no rule matches or host is itself a suffix."""
        host = host.strip(".").lower()
        if not host:
            return None
        labels = host.split(".")
        lookup = [_to_unicode(label) for label in labels]
        k = self.suffix_length(lookup)
        if k == 0 or k >= len(labels):
            return None
        return ".".join(labels[-(k + 1) :])


def _to_unicode(label: str) -> str:
    if label.startswith("xn--"):
        try:
            return label.encode("ascii").decode("idna")
        except UnicodeError:
            return label
    return label


@lru_cache(maxsize=1)
def default_psl() -> PublicSuffixList:
    text = resources.files("lpdata.resources").joinpath("public_suffix_list.dat").read_text("utf-8")
    return PublicSuffixList(text.splitlines())


def hostname(url: str) -> str:
    """Lowercased host of an absolute URL; raises ValueError('bad_url')."""
    try:
        parts = urlsplit(url.strip())
        host = parts.hostname
    except ValueError:
        raise ValueError("bad_url") from None
    if not parts.scheme or not host:
        raise ValueError("bad_url")
    return host.rstrip(".")


def domain_key(url: str, psl: PublicSuffixList | None = None) -> str:
    """Registered domain of ``url``; the full hostname if no suffix rule applies."""
    host = hostname(url)
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    reg = (psl or default_psl()).registered_domain(host)
    return reg or host


@dataclass(frozen=True)
class UrlBlocklist:
    blocked_domains: frozenset[str] = field(default_factory=frozenset)
    blocked_substrings: tuple[str, ...] = ()

    @classmethod
    def from_lines(cls, lines) -> UrlBlocklist:
        domains, subs = set(), []
        for raw in lines:
            entry = raw.strip().lower()
            if not entry or entry.startswith("#"):
                continue
            if "/" in entry:
                subs.append(entry)
            else:
                domains.add(entry.strip("."))
        return cls(frozenset(domains), tuple(subs))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> UrlBlocklist:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)


def url_block_reason(url: str, blocklist: UrlBlocklist, psl: PublicSuffixList | None = None) -> str | None:
    try:
        host = hostname(url)
        key = domain_key(url, psl)
    except ValueError:
        return "unparseable"
    if blocklist.blocked_domains:
        # the registered domain, the host itself or any parent of the host
        labels = host.split(".")
        if key in blocklist.blocked_domains or any(
            ".".join(labels[i:]) in blocklist.blocked_domains for i in range(len(labels))
        ):
            return "blocked_domain"
    lowered = url.lower()
    for sub in blocklist.blocked_substrings:
        if sub in lowered:
            return "blocked_substring"
    return None


def url_allowed(url: str, blocklist: UrlBlocklist, psl: PublicSuffixList | None = None) -> bool:
    return url_block_reason(url, blocklist, psl) is None
