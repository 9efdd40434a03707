"""Run manifest: per-stage lineage, counts, drop histograms and checksums."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

MANIFEST_NAME = "manifest.json"
STATUSES = ("pending", "running", "done", "failed")


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_hash(*parts: Any) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ShardFile:
    path: str  # relative to the workdir
    sha256: str
    docs: int
    bytes: int


@dataclass
class StageRecord:
    name: str
    status: str = "pending"
    fingerprint: str = ""
    input_shards: list[str] = field(default_factory=list)
    output_shards: list[ShardFile] = field(default_factory=list)
    docs_in: int = 0
    docs_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    wall_seconds: float = 0.0
    drops: dict[str, int] = field(default_factory=dict)
    rule_failures: dict[str, int] = field(default_factory=dict)
    counters: dict[str, Any] = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StageRecord:
        known = {f.name for f in fields(cls)}
        rec = cls(**{k: v for k, v in d.items() if k in known})
        rec.output_shards = [ShardFile(**s) for s in d.get("output_shards", [])]
        return rec

    def verify(self, workdir: str | os.PathLike) -> bool:
        """True iff done and every output shard exists with its recorded checksum."""
        if self.status != "done":
            return False
        root = Path(workdir)
        for shard in self.output_shards:
            p = root / shard.path
            if not p.is_file() or file_sha256(p) != shard.sha256:
                return False
        return True


@dataclass
class RunManifest:
    run_id: str
    dump_id: str
    config_fingerprint: str = ""
    stages: list[StageRecord] = field(default_factory=list)

    def stage(self, name: str) -> StageRecord | None:
        for s in self.stages:
            if s.name == name:
                return s
        return None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunManifest:
        return cls(
            run_id=d["run_id"],
            dump_id=d.get("dump_id", ""),
            config_fingerprint=d.get("config_fingerprint", ""),
            stages=[StageRecord.from_dict(s) for s in d.get("stages", [])],
        )

    def save(self, workdir: str | os.PathLike) -> Path:
        path = Path(workdir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# reporting


def _pct(out: int, inp: int) -> float:
    return 100.0 * out / inp if inp else 100.0


def stats(manifest: RunManifest) -> tuple[str, dict[str, Any]]:
    """Per-stage table (docs/bytes in and out, retention, time, top drop reasons)."""
    rows = []
    for s in manifest.stages:
        top = sorted(s.drops.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
        rows.append(
            {
                "stage": s.name,
                "status": s.status,
                "docs_in": s.docs_in,
                "docs_out": s.docs_out,
                "bytes_in": s.bytes_in,
                "bytes_out": s.bytes_out,
                "retention_pct": _pct(s.docs_out, s.docs_in),
                "wall_seconds": s.wall_seconds,
                "top_drop_reasons": dict(top),
            }
        )
    total = {
        "docs_in": rows[0]["docs_in"] if rows else 0,
        "docs_out": rows[-1]["docs_out"] if rows else 0,
        "bytes_in": rows[0]["bytes_in"] if rows else 0,
        "bytes_out": rows[-1]["bytes_out"] if rows else 0,
        "wall_seconds": sum(r["wall_seconds"] for r in rows),
    }
    total["retention_pct"] = _pct(total["docs_out"], total["docs_in"])
    report = {"run_id": manifest.run_id, "dump_id": manifest.dump_id, "stages": rows, "total": total}

    header = ("stage", "status", "docs_in", "docs_out", "retain%", "bytes_in", "bytes_out", "seconds", "top drops")
    table = [header]
    for r in rows:
        drops = ", ".join(f"{k}={v}" for k, v in r["top_drop_reasons"].items())
        table.append(
            (
                r["stage"], r["status"], str(r["docs_in"]), str(r["docs_out"]),
                f"{r['retention_pct']:.1f}", str(r["bytes_in"]), str(r["bytes_out"]),
                f"{r['wall_seconds']:.2f}", drops,
            )
        )
    table.append(
        (
            "total", "", str(total["docs_in"]), str(total["docs_out"]), f"{total['retention_pct']:.1f}",
            str(total["bytes_in"]), str(total["bytes_out"]), f"{total['wall_seconds']:.2f}", "",
        )
    )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    text = "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table)
    return text, report
