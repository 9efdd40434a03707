"""Streaming reader for gzip multistream WARC files."""

from __future__ import annotations

import gzip
import logging
import os
import zlib
from collections import Counter
from collections.abc import Iterator
from dataclasses import dataclass, field
from typing import BinaryIO

log = logging.getLogger(__name__)

GZIP_MAGIC = b"\x1f\x8b\x08"
MAX_PAYLOAD = 8 * 1024 * 1024
# a member carrying a payload above MAX_PAYLOAD is still decoded up to here
_MAX_MEMBER = MAX_PAYLOAD + 1024 * 1024
_CHUNK = 1 << 16


@dataclass
class WarcRecord:
    target_uri: str
    record_type: str
    http_status: int
    content_type: str
    payload: bytes
    offset: int = 0
    http_headers: dict[str, str] = field(default_factory=dict)
    truncated: bool = False

    @property
    def charset(self) -> str | None:
        for part in self.content_type.split(";")[1:]:
            key, _, value = part.strip().partition("=")
            if key.strip().lower() == "charset" and value:
                return value.strip().strip("\"'")
        return None

    def is_html_ok(self) -> bool:
        return (
            self.record_type == "response"
            and self.http_status == 200
            and "text/html" in self.content_type.lower()
        )


def _members(fh: BinaryIO, stats: Counter) -> Iterator[tuple[int, bytes, bool]]:
    """Yield (compressed offset, decompressed bytes, oversize flag) per gzip member."""
    buf = b""
    pos = 0  # absolute offset of buf[0]
    eof = False

    def fill() -> bool:
        nonlocal buf, eof
        if eof:
            return False
        chunk = fh.read(_CHUNK)
        if not chunk:
            eof = True
            return False
        buf += chunk
        return True

    while True:
        while len(buf) < 3 and fill():
            pass
        if len(buf) < 3:
            return
        if not buf.startswith(GZIP_MAGIC):
            idx = buf.find(GZIP_MAGIC, 1)
            if idx < 0:
                keep = buf[-2:]
                pos += len(buf) - len(keep)
                buf = keep
                if not fill():
                    return
                continue
            pos += idx
            buf = buf[idx:]
            continue

        start = pos
        d = zlib.decompressobj(wbits=31)
        out = bytearray()
        oversize = False
        consumed = 0
        corrupt = False
        while True:
            try:
                data = d.decompress(buf[consumed:])
            except zlib.error:
                corrupt = True
                break
            consumed = len(buf)
            if not oversize:
                out += data
                if len(out) > _MAX_MEMBER:
                    oversize = True
                    out = out[:_MAX_MEMBER]
            if d.eof:
                break
            if not fill():
                break
        if corrupt:
            stats["corrupt_members"] += 1
            log.warning("corrupt gzip member at offset %d", start)
            # resync on the next member header
            pos += 1
            buf = buf[1:]
            idx = buf.find(GZIP_MAGIC)
            while idx < 0:
                keep = buf[-2:]
                pos += len(buf) - len(keep)
                buf = keep
                if not fill():
                    return
                idx = buf.find(GZIP_MAGIC)
            pos += idx
            buf = buf[idx:]
            continue
        if not d.eof:
            stats["truncated_members"] += 1
            log.warning("truncated final gzip member at offset %d", start)
            return
        rest = d.unused_data
        pos += len(buf) - len(rest)
        buf = rest
        yield start, bytes(out), oversize


def _parse_headers(block: bytes) -> dict[str, str]:
    headers: dict[str, str] = {}
    for raw in block.split(b"\r\n"):
        if not raw:
            continue
        name, sep, value = raw.partition(b":")
        if not sep:
            raise ValueError(f"bad header line {raw[:60]!r}")
        headers[name.decode("latin-1").strip().lower()] = value.decode("latin-1").strip()
    return headers


def _dechunk(body: bytes) -> bytes:
    out = bytearray()
    i = 0
    while i < len(body):
        eol = body.find(b"\r\n", i)
        if eol < 0:
            break
        size_field = body[i:eol].split(b";")[0].strip()
        try:
            size = int(size_field, 16)
        except ValueError:
            return body
        if size == 0:
            break
        out += body[eol + 2 : eol + 2 + size]
        i = eol + 2 + size + 2
    return bytes(out)


def parse_http_response(block: bytes) -> tuple[int, dict[str, str], bytes]:
    head, sep, body = block.partition(b"\r\n\r\n")
    if not sep:
        head, sep, body = block.partition(b"\n\n")
    status_line, _, header_block = head.partition(b"\r\n")
    parts = status_line.split(None, 2)
    if len(parts) < 2 or not parts[0].startswith(b"HTTP/"):
        raise ValueError("not an HTTP response")
    status = int(parts[1])
    headers = _parse_headers(header_block)
    if "chunked" in headers.get("transfer-encoding", "").lower():
        body = _dechunk(body)
    enc = headers.get("content-encoding", "").lower()
    if enc in ("gzip", "x-gzip"):
        try:
            body = gzip.decompress(body)
        except (OSError, EOFError, zlib.error):
            pass
    elif enc == "deflate":
        try:
            body = zlib.decompress(body)
        except zlib.error:
            pass
    return status, headers, body


def _records(data: bytes, offset: int, oversize: bool, stats: Counter) -> Iterator[WarcRecord]:
    i = 0
    while i < len(data):
        if not data.startswith(b"WARC/", i):
            nxt = data.find(b"WARC/", i + 1)
            if nxt < 0:
                return
            i = nxt
        head_end = data.find(b"\r\n\r\n", i)
        if head_end < 0:
            stats["malformed_headers"] += 1
            return
        try:
            lines = data[i:head_end].split(b"\r\n", 1)
            headers = _parse_headers(lines[1] if len(lines) > 1 else b"")
            length = int(headers["content-length"])
        except (ValueError, KeyError):
            stats["malformed_headers"] += 1
            nxt = data.find(b"WARC/", head_end)
            if nxt < 0:
                return
            i = nxt
            continue
        block_start = head_end + 4
        block = data[block_start : block_start + length]
        i = block_start + length
        while data.startswith(b"\r\n", i):
            i += 2
        rtype = headers.get("warc-type", "")
        if rtype != "response":
            stats[f"skipped_{rtype or 'untyped'}"] += 1
            continue
        truncated = oversize or len(block) < length
        status, ctype, payload, http_headers = 0, "", b"", {}
        if headers.get("content-type", "").startswith("application/http"):
            try:
                status, http_headers, payload = parse_http_response(block)
                ctype = http_headers.get("content-type", "")
            except ValueError:
                stats["malformed_http"] += 1
        else:
            payload = block
            ctype = headers.get("content-type", "")
        stats["responses"] += 1
        yield WarcRecord(
            target_uri=headers.get("warc-target-uri", "").strip("<>"),
            record_type=rtype,
            http_status=status,
            content_type=ctype,
            payload=payload,
            offset=offset,
            http_headers=http_headers,
            truncated=truncated or length > MAX_PAYLOAD,
        )


def iterate_warc(path: str | os.PathLike, stats: Counter | None = None) -> Iterator[WarcRecord]:
    """Yield the response records of a WARC file in file order.

    Corrupt gzip members are skipped (``stats['corrupt_members']``), a
    truncated last member ends the stream (``stats['truncated_members']``),
    and records with unreadable headers are skipped. Uncompressed WARC files
    are read as a single block.
    """
    stats = stats if stats is not None else Counter()
    with open(path, "rb") as fh:
        head = fh.read(3)
        fh.seek(0)
        if head and head != GZIP_MAGIC:
            data = fh.read()
            yield from _records(data, 0, False, stats)
            return
        for offset, data, oversize in _members(fh, stats):
            yield from _records(data, offset, oversize, stats)
