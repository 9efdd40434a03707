"""Polling loop that runs the pipeline once per newly seen dump.

The watched directory holds one subdirectory per dump (its name is the dump
id) or loose input files (each its own dump, named after the file). Writers
should move finished files into place; dot-files are ignored.
"""

from __future__ import annotations

import json
import logging
import os
import time
from collections.abc import Callable
from dataclasses import replace
from pathlib import Path

from lpdata.pipeline.config import PipelineConfig, _is_input_file
from lpdata.pipeline.manifest import RunManifest
from lpdata.pipeline.runner import RunInProgress, StageFailure, run
from lpdata.routing import ConfigError

log = logging.getLogger(__name__)

STATE_NAME = "watch_state.json"
_SUFFIXES = (".warc.gz", ".warc", ".jsonl.gz", ".jsonl")


def _strip_suffix(name: str) -> str:
    for suf in _SUFFIXES:
        if name.endswith(suf):
            return name[: -len(suf)]
    return name


def discover_dumps(root: str | os.PathLike) -> dict[str, list[Path]]:
    root = Path(root)
    dumps: dict[str, list[Path]] = {}
    for entry in sorted(root.iterdir()):
        if entry.name.startswith("."):
            continue
        if entry.is_dir():
            files = sorted(p for p in entry.iterdir() if _is_input_file(p))
            if files:
                dumps[entry.name] = files
        elif _is_input_file(entry):
            dumps[_strip_suffix(entry.name)] = [entry]
    return dumps


def _load_state(path: Path) -> dict[str, list]:
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _save_state(path: Path, state: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def dump_config(cfg: PipelineConfig, dump_id: str, files: list[Path]) -> PipelineConfig:
    return replace(
        cfg,
        input=[str(p) for p in files],
        dump_id=dump_id,
        workdir=str(Path(cfg.workdir) / "runs" / dump_id),
    )


def poll_once(cfg: PipelineConfig) -> dict[str, RunManifest]:
    """Run every dump whose input set changed since it was last processed."""
    if len(cfg.input) != 1 or not Path(cfg.input[0]).is_dir():
        raise ConfigError("watch needs input to be a single directory")
    state_path = Path(cfg.workdir) / STATE_NAME
    state = _load_state(state_path)
    started: dict[str, RunManifest] = {}
    for dump_id, files in discover_dumps(cfg.input[0]).items():
        seen = [[p.name, p.stat().st_size] for p in files]
        if state.get(dump_id) == seen:
            continue
        sub = dump_config(cfg, dump_id, files)
        try:
            started[dump_id] = run(sub)
        except RunInProgress as exc:
            log.warning("%s", exc)
            continue
        except StageFailure as exc:
            log.error("dump %s: %s", dump_id, exc)
            continue
        state[dump_id] = seen
        _save_state(state_path, state)
    return started


def watch(
    cfg: PipelineConfig,
    poll_interval: float = 60.0,
    max_polls: int | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, RunManifest]:
    """Poll until ``max_polls`` is reached (forever when None)."""
    runs: dict[str, RunManifest] = {}
    polls = 0
    while max_polls is None or polls < max_polls:
        runs.update(poll_once(cfg))
        polls += 1
        if max_polls is None or polls < max_polls:
            sleep(poll_interval)
    return runs
