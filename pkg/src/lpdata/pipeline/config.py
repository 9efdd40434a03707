"""Pipeline configuration: a TOML tree resolved into typed per-stage settings.

Relative paths in the file are resolved against the file's directory.
"""

from __future__ import annotations

import copy
import glob
import os
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from lpdata.heuristics import ThresholdConfig
from lpdata.langid import LangIdConfig
from lpdata.linededup import LineDedupPolicy
from lpdata.minhash import LshParams
from lpdata.ngram_lm import LabelingRule
from lpdata.routing import ConfigError, RoutingConfig

CANONICAL_STAGES = ("extract", "langid", "linededup", "heuristics", "globaldedup", "quality", "domain")
_PATH_KEYS = {
    ("extract", "blocklist"),
    ("langid", "model"),
    ("heuristics", "resource_dir"),
    ("quality", "model"),
    ("domain", "model"),
}
_TOP_KEYS = {"input", "workdir", "dump_id", "stages", "shard_count", "worker_count", "seed"}
_SECTIONS = {
    "extract": {"blocklist"},
    "langid": {"model", "target_langs", "min_score", "sample_chars"},
    "linededup": {"max_doc_frequency", "min_line_chars", "min_remaining_chars", "max_table_mb"},
    "heuristics": {"resource_dir", "short_line_chars", "thresholds"},
    "dedup": {"shingle_words", "num_perms", "bands", "rows", "jaccard_threshold", "seed", "partitions", "exact_verify"},
    "quality": {"model", "min_score"},
    "domain": {"model", "min_score", "labels"},
    "lm": {"order", "smoothing", "add_k"},
    "label": {"good_ppl_max", "bad_ppl_min", "margin_mode", "ratio_min"},
}
# which config sections feed each stage's fingerprint
STAGE_SECTIONS = {
    "extract": ("extract",),
    "langid": ("langid",),
    "linededup": ("linededup",),
    "heuristics": ("heuristics",),
    "globaldedup": ("dedup",),
    "quality": ("quality",),
    "domain": ("domain",),
}
STAGE_MODEL_KEYS = {"langid": ("langid", "model"), "quality": ("quality", "model"), "domain": ("domain", "model")}


@dataclass
class PipelineConfig:
    input: list[str] = field(default_factory=list)
    workdir: str = "work"
    dump_id: str = "local"
    stages: tuple[str, ...] = CANONICAL_STAGES
    shard_count: int = 4
    worker_count: int = 1
    seed: int = 0
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, Any]:
        return self.sections.get(name, {})

    # -- typed views -------------------------------------------------------

    def langid(self) -> LangIdConfig:
        s = self.section("langid")
        kw = {k: s[k] for k in ("min_score", "sample_chars") if k in s}
        if "target_langs" in s:
            kw["target_langs"] = frozenset(s["target_langs"])
        return LangIdConfig(**kw)

    def linededup(self) -> LineDedupPolicy:
        s = self.section("linededup")
        return LineDedupPolicy(**{k: s[k] for k in ("max_doc_frequency", "min_line_chars", "min_remaining_chars") if k in s})

    def max_table_mb(self) -> float:
        return float(self.section("linededup").get("max_table_mb", 1024))

    def thresholds(self) -> ThresholdConfig:
        return ThresholdConfig.from_mapping(self.section("heuristics").get("thresholds", {}))

    def lsh(self) -> LshParams:
        s = self.section("dedup")
        keys = ("shingle_words", "num_perms", "bands", "rows", "jaccard_threshold", "seed")
        return LshParams(**{k: s[k] for k in keys if k in s})

    def dedup_partitions(self) -> int:
        return int(self.section("dedup").get("partitions", 64))

    def routing(self) -> RoutingConfig:
        q, d = self.section("quality"), self.section("domain")
        kw: dict[str, Any] = {
            "quality_model_path": q.get("model"),
            "domain_model_path": d.get("model"),
        }
        if "min_score" in q:
            kw["quality_min_score"] = float(q["min_score"])
        if "min_score" in d:
            kw["domain_min_score"] = float(d["min_score"])
        if "labels" in d:
            kw["domain_labels"] = tuple(d["labels"])
        return RoutingConfig(**kw)

    def labeling(self) -> LabelingRule:
        return LabelingRule(**self.section("label"))

    def lm_settings(self) -> dict[str, Any]:
        s = self.section("lm")
        return {"order": int(s.get("order", 3)), "smoothing": s.get("smoothing", "kneser_ney"), "add_k": float(s.get("add_k", 0.5))}

    # -- validation --------------------------------------------------------

    def input_paths(self) -> list[Path]:
        """Expand globs and directories into a sorted list of input files."""
        out: set[Path] = set()
        for item in self.input:
            matches = sorted(glob.glob(item)) or [item]
            for m in matches:
                p = Path(m)
                if p.is_dir():
                    out.update(q for q in p.iterdir() if _is_input_file(q))
                elif p.exists():
                    out.add(p)
                else:
                    raise ConfigError(f"input not found: {m}")
        return sorted(out)

    def validate(self) -> None:
        if not self.stages:
            raise ConfigError("no stages configured")
        positions = []
        for s in self.stages:
            if s not in CANONICAL_STAGES:
                raise ConfigError(f"unknown stage {s!r}")
            positions.append(CANONICAL_STAGES.index(s))
        if positions != sorted(set(positions)):
            raise ConfigError("stages must follow the canonical order without repeats: " + ", ".join(CANONICAL_STAGES))
        if self.shard_count < 1 or self.worker_count < 1:
            raise ConfigError("shard_count and worker_count must be >= 1")
        if not self.dump_id or "/" in self.dump_id:
            raise ConfigError("dump_id must be a non-empty name")
        try:
            langid = self.langid()
            self.linededup()
            thresholds = self.thresholds()
            self.lsh()
            self.routing()
            self.labeling()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if "langid" in self.stages and "heuristics" in self.stages:
            missing = sorted(set(langid.target_langs) - set(thresholds.rules))
            if missing:
                raise ConfigError(f"no heuristic thresholds for target languages {missing}")
        for stage, (sec, key) in STAGE_MODEL_KEYS.items():
            if stage in self.stages:
                path = self.section(sec).get(key)
                if not path or not os.path.isfile(path):
                    raise ConfigError(f"{sec}.{key} must name an existing file (got {path!r})")
        bl = self.section("extract").get("blocklist")
        if bl and not os.path.isfile(bl):
            raise ConfigError(f"extract.blocklist not found: {bl}")
        rd = self.section("heuristics").get("resource_dir")
        if rd and not os.path.isdir(rd):
            raise ConfigError(f"heuristics.resource_dir not found: {rd}")
        if "extract" in self.stages:
            if not self.input_paths():
                raise ConfigError("no input files")

    def to_tree(self) -> dict[str, Any]:
        """Resolved config as a plain tree (used for fingerprints)."""
        tree: dict[str, Any] = {
            "input": [str(p) for p in self.input],
            "workdir": self.workdir,
            "dump_id": self.dump_id,
            "stages": list(self.stages),
            "shard_count": self.shard_count,
            "worker_count": self.worker_count,
            "seed": self.seed,
        }
        tree.update(copy.deepcopy(self.sections))
        return tree


def _is_input_file(p: Path) -> bool:
    name = p.name
    return p.is_file() and not name.startswith(".") and (
        name.endswith((".warc.gz", ".warc", ".jsonl", ".jsonl.gz"))
    )


def from_mapping(tree: Mapping[str, Any], base_dir: str | os.PathLike = ".") -> PipelineConfig:
    base = Path(base_dir)
    unknown = set(tree) - _TOP_KEYS - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    sections: dict[str, dict[str, Any]] = {}
    for name, allowed in _SECTIONS.items():
        sec = tree.get(name, {})
        if not isinstance(sec, Mapping):
            raise ConfigError(f"[{name}] must be a table")
        bad = set(sec) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        sec = copy.deepcopy(dict(sec))
        for key in list(sec):
            if (name, key) in _PATH_KEYS and sec[key]:
                sec[key] = str(_resolve(base, sec[key]))
        if sec:
            sections[name] = sec
    inputs = tree.get("input", [])
    if isinstance(inputs, str):
        inputs = [inputs]
    try:
        cfg = PipelineConfig(
            input=[str(_resolve(base, p)) for p in inputs],
            workdir=str(_resolve(base, tree.get("workdir", "work"))),
            dump_id=str(tree.get("dump_id", "local")),
            stages=tuple(tree.get("stages", CANONICAL_STAGES)),
            shard_count=int(tree.get("shard_count", 4)),
            worker_count=int(tree.get("worker_count", 1)),
            seed=int(tree.get("seed", 0)),
            sections=sections,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _resolve(base: Path, p: str) -> Path:
    path = Path(os.path.expanduser(str(p)))
    return path if path.is_absolute() else base / path


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(tree, path.parent)
