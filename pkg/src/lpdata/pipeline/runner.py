"""Shard-parallel stage execution and the resumable run loop.

Layout under the workdir::

    manifest.json
    stages/<stage>/<shard:05>.jsonl.gz   kept documents after each stage
    tmp/<stage>/...                      spill and partial files (removed when done)
    out/<corpus>/<lang>/<shard:05>.jsonl.gz, out/report.domain_counts.json
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import struct
import time
from collections import Counter
from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from lpdata import heuristics, langid, linededup, minhash, routing
from lpdata.classifier import ClassifierModel, load_model
from lpdata.corpus import (
    Document,
    FilterOutcome,
    read_jsonl,
    tokenize_words,
    write_jsonl,
)
from lpdata.domains import UrlBlocklist, domain_key, url_block_reason
from lpdata.hashing import hash64
from lpdata.html_text import extract
from lpdata.pipeline.config import STAGE_MODEL_KEYS, STAGE_SECTIONS, PipelineConfig
from lpdata.pipeline.manifest import (
    RunManifest,
    ShardFile,
    StageRecord,
    file_sha256,
    tree_hash,
)
from lpdata.routing import ConfigError
from lpdata.warc import iterate_warc

log = logging.getLogger(__name__)

LOCK_NAME = ".lock"
NEAR_DUPLICATES_NAME = "near_duplicates.json"


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage


class RunInProgress(RuntimeError):
    def __init__(self, workdir: str | os.PathLike):
        super().__init__(f"run_in_progress: {workdir}")


@dataclass
class ShardResult:
    docs_in: int = 0
    docs_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    drops: Counter = field(default_factory=Counter)
    rule_failures: Counter = field(default_factory=Counter)
    counters: Counter = field(default_factory=Counter)

    def absorb(self, other: ShardResult) -> None:
        self.docs_in += other.docs_in
        self.docs_out += other.docs_out
        self.bytes_in += other.bytes_in
        self.bytes_out += other.bytes_out
        self.drops.update(other.drops)
        self.rule_failures.update(other.rule_failures)
        self.counters.update(other.counters)


def _text_bytes(doc: Document) -> int:
    return len(doc.text.encode("utf-8"))


# ---------------------------------------------------------------------------
# worker-side helpers (module level so they pickle)

_MODEL_CACHE: dict[str, ClassifierModel] = {}


def _model(path: str) -> ClassifierModel:
    m = _MODEL_CACHE.get(path)
    if m is None:
        m = _MODEL_CACHE[path] = load_model(path)
    return m


def _shard_of(key: str, shard_count: int) -> int:
    return hash64(key) % shard_count


def _doc_id(dump_id: str, source: str, offset: int) -> str:
    key = "\x00".join((dump_id, source, str(offset)))
    return f"{hash64(key):016x}"


def _extract_records(cfg: PipelineConfig, path: Path, res: ShardResult) -> Iterator[Document]:
    bl_path = cfg.section("extract").get("blocklist")
    blocklist = UrlBlocklist.from_file(bl_path) if bl_path else UrlBlocklist()
    name = path.name
    if name.endswith((".jsonl", ".jsonl.gz")):
        res.bytes_in += path.stat().st_size
        for doc in read_jsonl(path):
            res.docs_in += 1
            if not doc.dump_id:
                doc.dump_id = cfg.dump_id
            reason = url_block_reason(doc.url, blocklist) if doc.url else "unparseable"
            if reason is None and not doc.domain_key:
                doc.domain_key = domain_key(doc.url)
            if reason is None and not doc.text.strip():
                reason = "empty_text"
            if reason:
                res.drops[reason] += 1
                continue
            yield doc
        return
    warc_stats: Counter = Counter()
    res.bytes_in += path.stat().st_size
    for rec in iterate_warc(path, warc_stats):
        res.docs_in += 1
        if rec.truncated:
            reason = "oversize"
        elif rec.http_status != 200:
            reason = "http_status"
        elif "text/html" not in rec.content_type.lower():
            reason = "non_html"
        else:
            reason = url_block_reason(rec.target_uri, blocklist)
        if reason is None:
            try:
                key = domain_key(rec.target_uri)
            except ValueError:
                reason = "bad_url"
        if reason is None:
            text, reason = extract(rec.payload, rec.charset)
        if reason:
            res.drops[reason] += 1
            continue
        yield Document(
            id=_doc_id(cfg.dump_id, name, rec.offset),
            url=rec.target_uri,
            domain_key=key,
            dump_id=cfg.dump_id,
            text=text,
            filter=FilterOutcome.keep("extract"),
        )
    res.counters.update({f"warc_{k}": v for k, v in warc_stats.items()})


def extract_file(cfg: PipelineConfig, index: int, path: str, parts_dir: str) -> ShardResult:
    """Map one input file to per-shard partial files, partitioned by domain_key."""
    res = ShardResult()
    buckets: dict[int, list[Document]] = {}
    for doc in _extract_records(cfg, Path(path), res):
        buckets.setdefault(_shard_of(doc.domain_key, cfg.shard_count), []).append(doc)
        res.docs_out += 1
        res.bytes_out += _text_bytes(doc)
    for shard, docs in buckets.items():
        write_jsonl(Path(parts_dir) / f"f{index:05d}.s{shard:05d}.jsonl.gz", docs)
    return res


def _doc_filter(stage: str, cfg: PipelineConfig, aux: str | None) -> Callable[[Document], Document]:
    """Per-document function for a stage; it sets ``doc.filter``."""
    if stage == "langid":
        model, lcfg = _model(cfg.section("langid")["model"]), cfg.langid()

        def run(doc: Document) -> Document:
            langid.identify(model, doc, lcfg)
            doc.filter = langid.filter_language(doc, lcfg)
            return doc

        return run
    if stage == "heuristics":
        tcfg = cfg.thresholds()
        sec = cfg.section("heuristics")
        resources: dict[str, heuristics.HeuristicResources] = {}

        def run(doc: Document) -> Document:
            res = resources.get(doc.lang)
            if res is None:
                res = resources[doc.lang] = heuristics.HeuristicResources.load(
                    doc.lang, sec.get("resource_dir"), int(sec.get("short_line_chars", 30))
                )
            metrics = heuristics.compute_metrics(doc.text, doc.lang, res)
            doc.metrics = metrics.to_dict()
            try:
                doc.filter = heuristics.apply_thresholds(metrics, tcfg, doc.lang)
            except KeyError:
                doc.filter = FilterOutcome.drop(heuristics.STAGE, "no_thresholds_for_lang")
            return doc

        return run
    if stage == "linededup":
        policy = cfg.linededup()
        removed = _read_removals(aux)
        empty: set[int] = set()

        def run(doc: Document) -> Document:
            return linededup.strip_lines(doc, removed.get(linededup.group_id(doc.domain_key), empty), policy)

        return run
    if stage == "globaldedup":
        with open(aux, encoding="utf-8") as fh:
            dropped = json.load(fh)

        def run(doc: Document) -> Document:
            if doc.id in dropped:
                doc.filter = FilterOutcome.drop(minhash.STAGE, f"near_duplicate_of:{dropped[doc.id]}")
            else:
                doc.filter = FilterOutcome.keep(minhash.STAGE)
            return doc

        return run
    if stage == "quality":
        rcfg = cfg.routing()
        model = _model(rcfg.quality_model_path)
        rcfg.check_quality_model(model)
        return lambda doc: routing.quality_filter(model, doc, rcfg)
    if stage == "domain":
        rcfg = cfg.routing()
        model = _model(rcfg.domain_model_path)
        rcfg.check_domain_model(model)
        return lambda doc: routing.classify_domain(model, doc, rcfg)
    raise ValueError(f"no per-document function for stage {stage}")


def filter_shard(stage: str, cfg: PipelineConfig, in_path: str, out_path: str, aux: str | None = None) -> ShardResult:
    """Apply one stage to one shard, writing the kept documents."""
    fn = _doc_filter(stage, cfg, aux)
    res = ShardResult()
    kept: list[Document] = []
    for doc in read_jsonl(in_path):
        res.docs_in += 1
        res.bytes_in += _text_bytes(doc)
        fn(doc)
        if doc.filter is not None and not doc.filter.kept:
            # reasons may carry a detail after ':'; histograms count the code only
            codes = [r.split(":", 1)[0] for r in doc.filter.reasons]
            res.drops[codes[0]] += 1
            res.rule_failures.update(codes)
            continue
        kept.append(doc)
        res.docs_out += 1
        res.bytes_out += _text_bytes(doc)
    write_jsonl(out_path, kept)
    return res


def count_lines_shard(cfg: PipelineConfig, in_path: str, spill_dir: str, prefix: str) -> list[str]:
    counter = linededup.SpillingCounter(spill_dir, prefix, cfg.max_table_mb())
    for doc in read_jsonl(in_path):
        counter.add(doc)
    return [str(p) for p in counter.finish()]


def signature_shard(cfg: PipelineConfig, in_path: str, sig_path: str) -> int:
    """Write one signature per document; returns how many were too short to shingle."""
    params = cfg.lsh()
    short = 0
    tmp = Path(sig_path).with_name(Path(sig_path).name + ".tmp")
    with open(tmp, "wb") as fh:
        for doc in read_jsonl(in_path):
            sig = minhash.document_signature(doc, params)
            if sig.is_sentinel:
                short += 1
                log.debug("%s: %s", doc.id, minhash.TOO_SHORT)
            minhash.write_signature(fh, sig, doc.dump_id, len(doc.text))
    os.replace(tmp, sig_path)
    return short


def _exact_shingles(cfg: PipelineConfig, shards: Sequence[Path], wanted: set[str]) -> dict[str, set[int]]:
    params = cfg.lsh()
    out = {}
    for path in shards:
        for doc in read_jsonl(path):
            if doc.id in wanted:
                out[doc.id] = minhash.shingle(tokenize_words(doc.text, doc.lang), params.shingle_words)
    return out


_REMOVAL = struct.Struct("<QQ")


def _write_removals(path: Path, rows: Iterable[tuple[int, int]]) -> int:
    rows = sorted(rows)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.writelines(_REMOVAL.pack(*row) for row in rows)
    os.replace(tmp, path)
    return len(rows)


def _read_removals(path: str | None) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    if path:
        for gid, fp in _REMOVAL.iter_unpack(Path(path).read_bytes()):
            out.setdefault(gid, set()).add(fp)
    return out


# ---------------------------------------------------------------------------
# coordinator side


class _Executor:
    """Runs calls inline for one worker, otherwise in a process pool; results keep call order."""

    def __init__(self, workers: int):
        self.pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None

    def map(self, fn: Callable, calls: Sequence[tuple]) -> list:
        if self.pool is None:
            return [fn(*args) for args in calls]
        futures = [self.pool.submit(fn, *args) for args in calls]
        return [f.result() for f in futures]

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


def _stage_dir(workdir: Path, stage: str) -> Path:
    return workdir / "stages" / stage


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _shards(directory: Path) -> list[Path]:
    return sorted(p for p in directory.glob("*.jsonl.gz"))


def run_extract(cfg: PipelineConfig, inputs: Sequence[Path], out_dir: Path, tmp: Path, ex: _Executor) -> ShardResult:
    parts = _fresh_dir(tmp / "parts")
    results = ex.map(extract_file, [(cfg, i, str(p), str(parts)) for i, p in enumerate(inputs)])
    total = ShardResult()
    for r in results:
        total.absorb(r)
    _fresh_dir(out_dir)
    for shard in range(cfg.shard_count):
        docs: list[Document] = []
        for i in range(len(inputs)):
            part = parts / f"f{i:05d}.s{shard:05d}.jsonl.gz"
            if part.exists():
                docs.extend(read_jsonl(part))
        write_jsonl(out_dir / f"{shard:05d}.jsonl.gz", docs)
    shutil.rmtree(parts)
    return total


def run_filter(stage: str, cfg: PipelineConfig, shards: Sequence[Path], out_dir: Path, ex: _Executor, aux: str | None = None) -> ShardResult:
    _fresh_dir(out_dir)
    calls = [(stage, cfg, str(p), str(out_dir / p.name), aux) for p in shards]
    total = ShardResult()
    for r in ex.map(filter_shard, calls):
        total.absorb(r)
    return total


def run_linededup(cfg: PipelineConfig, shards: Sequence[Path], out_dir: Path, tmp: Path, ex: _Executor) -> ShardResult:
    spill_dir = _fresh_dir(tmp / "spill")
    calls = [(cfg, str(p), str(spill_dir), f"s{i:05d}") for i, p in enumerate(shards)]
    spills = [s for paths in ex.map(count_lines_shard, calls) for s in paths]
    # aggregation: global k-way merge of the sorted partial tables
    policy = cfg.linededup()
    removed = [(gid, fp) for gid, fp, c, n in linededup.merge_spills(spills) if policy.removes(c, n)]
    removal_path = tmp / "removed.bin"
    n_removed = _write_removals(removal_path, removed)
    res = run_filter("linededup", cfg, shards, out_dir, ex, str(removal_path))
    res.counters["spill_files"] = len(spills)
    res.counters["removed_fingerprints"] = n_removed
    return res


def run_globaldedup(cfg: PipelineConfig, shards: Sequence[Path], out_dir: Path, tmp: Path, ex: _Executor) -> ShardResult:
    sig_dir = _fresh_dir(tmp / "signatures")
    calls = [(cfg, str(p), str(sig_dir / f"{i:05d}.sig")) for i, p in enumerate(shards)]
    too_short = sum(ex.map(signature_shard, calls))
    params = cfg.lsh()

    def spilled() -> Iterator[minhash.SpilledSignature]:
        for i in range(len(shards)):
            yield from minhash.read_signatures(sig_dir / f"{i:05d}.sig", params.num_perms)

    triples, by_id = minhash.partitioned_candidates(spilled(), params, cfg.dedup_partitions(), tmp / "postings")
    exact = None
    if cfg.section("dedup").get("exact_verify"):
        exact = _exact_shingles(cfg, shards, {x for _, a, b in triples for x in (a, b)})
    clusters, dropped = minhash.cluster_and_resolve(
        ((a, b) for _, a, b in triples),
        {k: v.signature for k, v in by_id.items()},
        params,
        {k: v.text_len for k, v in by_id.items()},
        exact,
    )
    dropped_path = tmp / "dropped.json"
    dropped_path.write_text(json.dumps(dropped, sort_keys=True), encoding="utf-8")
    res = run_filter("globaldedup", cfg, shards, out_dir, ex, str(dropped_path))
    # dropped id -> kept id, next to the shards, so drop decisions stay traceable
    shutil.copyfile(dropped_path, out_dir / NEAR_DUPLICATES_NAME)
    res.counters["candidate_pairs"] = len(triples)
    res.counters["clusters"] = len(clusters)
    res.counters[minhash.TOO_SHORT] = too_short
    return res


def route_outputs(shards: Sequence[Path], out_root: Path) -> dict:
    """Route every domain-stage shard into the per-corpus layout and write the report."""
    _fresh_dir(out_root)
    reports = []
    for i, p in enumerate(shards):
        reports.append(routing.route(read_jsonl(p), out_root, i, write_report=False))
    merged = routing.merge_reports(reports)
    routing.save_report(out_root / routing.REPORT_NAME, merged)
    return merged


def execute_stage(
    stage: str,
    cfg: PipelineConfig,
    inputs: Sequence[Path],
    out_dir: Path,
    tmp: Path,
    ex: _Executor,
) -> ShardResult:
    """Run one stage from explicit inputs; ``inputs`` are raw files for extract, shards otherwise."""
    tmp.mkdir(parents=True, exist_ok=True)
    if stage == "extract":
        return run_extract(cfg, inputs, out_dir, tmp, ex)
    if stage == "linededup":
        return run_linededup(cfg, inputs, out_dir, tmp, ex)
    if stage == "globaldedup":
        return run_globaldedup(cfg, inputs, out_dir, tmp, ex)
    return run_filter(stage, cfg, inputs, out_dir, ex)


# ---------------------------------------------------------------------------
# fingerprints and locking


def base_fingerprint(cfg: PipelineConfig, inputs: Sequence[Path]) -> str:
    return tree_hash(
        "base",
        cfg.dump_id,
        cfg.shard_count,
        cfg.seed,
        [(p.name, file_sha256(p)) for p in inputs],
    )


def stage_fingerprint(prev: str, stage: str, cfg: PipelineConfig) -> str:
    subtree = {s: cfg.section(s) for s in STAGE_SECTIONS[stage]}
    model_hash = None
    if stage in STAGE_MODEL_KEYS:
        sec, key = STAGE_MODEL_KEYS[stage]
        model_hash = file_sha256(cfg.section(sec)[key])
        subtree = {s: {k: v for k, v in t.items() if k != key} for s, t in subtree.items()}
    if stage == "heuristics":
        rd = cfg.section("heuristics").get("resource_dir")
        if rd:
            model_hash = sorted((p.name, file_sha256(p)) for p in Path(rd).iterdir() if p.is_file())
        subtree = {"heuristics": {k: v for k, v in subtree["heuristics"].items() if k != "resource_dir"}}
    return tree_hash(prev, stage, subtree, model_hash)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def acquire_lock(workdir: Path) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / LOCK_NAME
    for _ in range(2):
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            try:
                pid = int(lock.read_text().strip() or 0)
            except (OSError, ValueError):
                pid = 0
            if pid and pid != os.getpid() and _pid_alive(pid):
                raise RunInProgress(workdir) from None
            lock.unlink(missing_ok=True)
            continue
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return lock
    raise RunInProgress(workdir)


# ---------------------------------------------------------------------------
# run


def _record_result(rec: StageRecord, res: ShardResult, workdir: Path, outputs: Iterable[Path]) -> None:
    rec.docs_in, rec.docs_out = res.docs_in, res.docs_out
    rec.bytes_in, rec.bytes_out = res.bytes_in, res.bytes_out
    rec.drops = dict(sorted(res.drops.items()))
    rec.rule_failures = dict(sorted(res.rule_failures.items()))
    rec.counters = dict(sorted(res.counters.items()))
    shards = []
    for p in sorted(outputs):
        if p.name.endswith(".jsonl.gz"):
            docs = sum(1 for _ in read_jsonl(p))
        else:
            docs = 0
        shards.append(ShardFile(str(p.relative_to(workdir)), file_sha256(p), docs, p.stat().st_size))
    rec.output_shards = shards


def run(cfg: PipelineConfig, until: str | None = None) -> RunManifest:
    """Execute (or resume) every configured stage, writing the manifest after each."""
    cfg.validate()
    if until is not None and until not in cfg.stages:
        raise ConfigError(f"--until names a stage not in this run: {until}")
    workdir = Path(cfg.workdir)
    lock = acquire_lock(workdir)
    try:
        return _run_locked(cfg, workdir, until)
    finally:
        lock.unlink(missing_ok=True)


def _run_locked(cfg: PipelineConfig, workdir: Path, until: str | None) -> RunManifest:
    inputs = cfg.input_paths()
    fp = base_fingerprint(cfg, inputs)
    fingerprints = {}
    for stage in cfg.stages:
        fp = stage_fingerprint(fp, stage, cfg)
        fingerprints[stage] = fp
    old: RunManifest | None = None
    mpath = workdir / "manifest.json"
    if mpath.exists():
        try:
            old = RunManifest.load(mpath)
        except (OSError, ValueError, KeyError):
            old = None
    manifest = RunManifest(
        run_id=f"{cfg.dump_id}-{fp[:12]}",
        dump_id=cfg.dump_id,
        config_fingerprint=fp,
        stages=[StageRecord(s, fingerprint=fingerprints[s]) for s in cfg.stages],
    )
    # carry over verified stages as long as the chain is unbroken
    reusable = True
    for rec in manifest.stages:
        prev = old.stage(rec.name) if old else None
        if reusable and prev is not None and prev.fingerprint == rec.fingerprint and prev.verify(workdir):
            manifest.stages[manifest.stages.index(rec)] = prev
        else:
            reusable = False
    manifest.save(workdir)

    ex = _Executor(cfg.worker_count)
    try:
        current: list[Path] = list(inputs)
        for rec in manifest.stages:
            out_dir = _stage_dir(workdir, rec.name)
            if rec.status == "done":
                log.info("stage %s: reusing verified outputs", rec.name)
            else:
                _execute_recorded(rec, cfg, current, out_dir, workdir, ex, manifest)
            current = _shards(out_dir)
            if rec.name == until:
                break
    finally:
        ex.close()
    return manifest


def _execute_recorded(
    rec: StageRecord,
    cfg: PipelineConfig,
    current: list[Path],
    out_dir: Path,
    workdir: Path,
    ex: _Executor,
    manifest: RunManifest,
) -> None:
    rec.status = "running"
    rec.error = None
    rec.input_shards = [str(p.relative_to(workdir)) if p.is_relative_to(workdir) else str(p) for p in current]
    manifest.save(workdir)
    tmp = workdir / "tmp" / rec.name
    start = time.perf_counter()
    try:
        res = execute_stage(rec.name, cfg, current, out_dir, tmp, ex)
        outputs = sorted(p for p in out_dir.iterdir() if p.is_file())
        if rec.name == "domain":
            out_root = workdir / "out"
            route_outputs(_shards(out_dir), out_root)
            outputs = outputs + sorted(p for p in out_root.rglob("*") if p.is_file())
        shutil.rmtree(tmp, ignore_errors=True)
    except Exception as exc:
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.wall_seconds = time.perf_counter() - start
        manifest.save(workdir)
        raise StageFailure(rec.name, exc) from exc
    rec.wall_seconds = round(time.perf_counter() - start, 3)
    _record_result(rec, res, workdir, outputs)
    rec.status = "done"
    manifest.save(workdir)


def final_outputs(workdir: str | os.PathLike) -> list[Path]:
    """Files that make up a run's result (stage shards and routed corpora)."""
    root = Path(workdir)
    files = [p for p in (root / "stages").rglob("*.jsonl.gz")] if (root / "stages").exists() else []
    if (root / "out").exists():
        files += [p for p in (root / "out").rglob("*") if p.is_file()]
    return sorted(files)
