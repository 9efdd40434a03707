"""Command-line entry point: ``lpdata <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

from lpdata import __version__
from lpdata.classifier import (
    TASK_PRESETS,
    TrainConfig,
    evaluate,
    read_training_file,
    save_model,
    train,
)
from lpdata.corpus import (
    Document,
    iter_cirrus,
    read_jsonl,
    select_by_category,
    write_jsonl,
)
from lpdata.ngram_lm import (
    LabelingRule,
    label_documents,
    lm_tokens,
    read_arpa,
    train_lm,
    write_arpa,
)
from lpdata.pipeline import config as pconfig
from lpdata.pipeline import manifest as pmanifest
from lpdata.pipeline import runner
from lpdata.pipeline import watch as pwatch
from lpdata.routing import ConfigError

log = logging.getLogger("lpdata")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
STAGE_COMMANDS = {
    "extract": "extract",
    "langid": "langid",
    "linededup": "linededup",
    "heuristics": "heuristics",
    "dedup": "globaldedup",
    "quality": "quality",
    "domain": "domain",
}


def _load_cfg(args: argparse.Namespace) -> pconfig.PipelineConfig:
    cfg = pconfig.load_config(args.config) if args.config else pconfig.PipelineConfig()
    changes = {}
    if args.workers is not None:
        changes["worker_count"] = args.workers
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workdir is not None:
        changes["workdir"] = args.workdir
    if getattr(args, "input", None):
        changes["input"] = [str(Path(p).resolve()) for p in args.input]
    if getattr(args, "dump_id", None):
        changes["dump_id"] = args.dump_id
    return replace(cfg, **changes) if changes else cfg


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------------------
# pipeline commands


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    manifest = runner.run(cfg, until=args.until)
    text, _ = pmanifest.stats(manifest)
    print(text)
    return EXIT_OK


def cmd_watch(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    runs = pwatch.watch(cfg, args.poll_interval, args.max_polls)
    for dump_id, manifest in sorted(runs.items()):
        print(f"{dump_id}: {manifest.run_id}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    target = args.manifest or args.workdir or (_load_cfg(args).workdir if args.config else None)
    if target is None:
        raise ConfigError("stats needs a manifest path or --workdir")
    manifest = pmanifest.RunManifest.load(target)
    text, report = pmanifest.stats(manifest)
    if args.json:
        _print_json(report)
    else:
        print(text)
    return EXIT_OK


def cmd_stage(args: argparse.Namespace) -> int:
    """Run a single stage from explicit input files into an output directory."""
    stage = STAGE_COMMANDS[args.command]
    cfg = _load_cfg(args)
    cfg = replace(cfg, stages=(stage,))
    cfg.validate()
    inputs = cfg.input_paths()
    if not inputs:
        raise ConfigError("no input files")
    out = Path(args.output)
    tmp = out.parent / f".{out.name}.tmp-{stage}"
    ex = runner._Executor(cfg.worker_count)
    try:
        res = runner.execute_stage(stage, cfg, inputs, out, tmp, ex)
        if stage == "domain":
            runner.route_outputs(runner._shards(out), out / "out")
    except (ConfigError, runner.RunInProgress):
        raise
    except Exception as exc:
        raise runner.StageFailure(stage, exc) from exc
    finally:
        ex.close()
    _print_json(
        {
            "stage": stage,
            "docs_in": res.docs_in,
            "docs_out": res.docs_out,
            "bytes_in": res.bytes_in,
            "bytes_out": res.bytes_out,
            "drops": dict(sorted(res.drops.items())),
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# training commands


def cmd_train_lm(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    lm = cfg.lm_settings()
    order = args.order or lm["order"]
    smoothing = args.smoothing or lm["smoothing"]
    add_k = args.add_k if args.add_k is not None else lm["add_k"]
    sentences = []
    for path in args.corpus:
        with open(path, encoding="utf-8") as fh:
            sentences.extend(toks for toks in (lm_tokens(line, args.lang) for line in fh) if toks)
    try:
        model = train_lm(sentences, order, smoothing, add_k, lang=args.lang)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_arpa(model, args.out)
    _print_json({"out": args.out, "order": order, "ngrams": [len(t) for t in model.tables], **model.meta})
    return EXIT_OK


def cmd_train_classifier(args: argparse.Namespace) -> int:
    shape, tcfg = TASK_PRESETS[args.task]
    try:
        if args.buckets:
            shape = replace(shape, bucket_count=args.buckets)
        tcfg = TrainConfig(
            epochs=args.epochs or tcfg.epochs,
            learning_rate=args.lr or tcfg.learning_rate,
            seed=args.seed if args.seed is not None else tcfg.seed,
            holdout_fraction=args.holdout if args.holdout is not None else tcfg.holdout_fraction,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    examples = []
    for path in args.data:
        examples.extend(read_training_file(path))
    try:
        result = train(examples, shape, tcfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_model(result.model, args.out)
    report = {"out": args.out, "labels": result.model.labels, "n_train": result.n_train, "n_holdout": result.n_holdout}
    if result.holdout:
        report.update(evaluate(result.model, result.holdout))
    _print_json(report)
    return EXIT_OK


def _read_docs(paths: list[str]) -> list[Document]:
    docs = []
    for p in paths:
        if p.endswith((".jsonl", ".jsonl.gz")):
            docs.extend(read_jsonl(p))
        else:
            with open(p, encoding="utf-8") as fh:
                docs.extend(Document(id=f"{Path(p).name}:{i}", text=line.strip()) for i, line in enumerate(fh) if line.strip())
    return docs


def cmd_label(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    rule = cfg.labeling()
    overrides = {k: v for k, v in (("good_ppl_max", args.good_ppl_max), ("bad_ppl_min", args.bad_ppl_min),
                                   ("margin_mode", args.margin_mode), ("ratio_min", args.ratio_min)) if v is not None}
    if overrides:
        rule = LabelingRule(**{**rule.__dict__, **overrides})
    good, bad = read_arpa(args.good), read_arpa(args.bad)
    examples, unlabeled = label_documents(good, bad, _read_docs(args.docs), rule)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.writelines(json.dumps({"text": ex.text, "label": ex.label}, ensure_ascii=False) + "\n" for ex in examples)
    counts = Counter(ex.label for ex in examples)
    _print_json({"out": str(out), "labels": dict(sorted(counts.items())), "unlabeled": unlabeled})
    return EXIT_OK


def cmd_select_wiki(args: argparse.Namespace) -> int:
    keywords = list(args.keywords or [])
    if args.keywords_file:
        with open(args.keywords_file, encoding="utf-8") as fh:
            keywords.extend(line.strip() for line in fh if line.strip() and not line.startswith("#"))
    if not keywords:
        raise ConfigError("no keywords given")
    stats: Counter = Counter()
    docs = list(select_by_category(iter_cirrus(args.dump), keywords, stats))
    if args.label:
        for d in docs:
            d.extra["label"] = args.label
    n = write_jsonl(args.out, docs)
    _print_json({"out": args.out, "selected": n, **dict(sorted(stats.items()))})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p: argparse.ArgumentParser, **kw) -> argparse.ArgumentParser:
        p.add_argument("--config", help="TOML pipeline config", **kw)
        p.add_argument("--workers", type=int, help="worker processes", **kw)
        p.add_argument("--seed", type=int, help="global seed", **kw)
        p.add_argument("--workdir", help="working directory for runs", **kw)
        p.add_argument("-v", "--verbose", action="store_true", **kw)
        return p

    # global flags are accepted before or after the subcommand
    common = global_flags(argparse.ArgumentParser(add_help=False), default=argparse.SUPPRESS)
    parser = global_flags(argparse.ArgumentParser(prog="lpdata", description=__doc__.splitlines()[0]))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run or resume the configured stages")
    p.add_argument("--input", nargs="+", help="override config input")
    p.add_argument("--dump-id")
    p.add_argument("--until", choices=pconfig.CANONICAL_STAGES, help="stop after this stage")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("watch", parents=[common], help="poll a directory and run each new dump")
    p.add_argument("--input", nargs=1, help="directory to watch (overrides config)")
    p.add_argument("--poll-interval", type=float, default=60.0)
    p.add_argument("--max-polls", type=int)
    p.set_defaults(fn=cmd_watch)

    p = sub.add_parser("stats", parents=[common], help="summarize a run manifest")
    p.add_argument("manifest", nargs="?", help="manifest.json or run workdir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_stats)

    for name, stage in STAGE_COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=f"run only the {stage} stage")
        p.add_argument("--input", nargs="+", required=True, help="input files (WARC or JSONL shards)")
        p.add_argument("--output", required=True, help="output shard directory")
        p.add_argument("--dump-id")
        p.set_defaults(fn=cmd_stage)

    p = sub.add_parser("train-lm", parents=[common], help="train an ARPA n-gram model")
    p.add_argument("corpus", nargs="+", help="UTF-8 text, one sentence per line")
    p.add_argument("--out", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--smoothing", choices=("kneser_ney", "add_k"))
    p.add_argument("--add-k", type=float)
    p.add_argument("--lang", default="")
    p.set_defaults(fn=cmd_train_lm)

    p = sub.add_parser("train-classifier", parents=[common], help="train a hashed n-gram classifier")
    p.add_argument("data", nargs="+", help="JSONL with text and label fields")
    p.add_argument("--task", choices=sorted(TASK_PRESETS), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--holdout", type=float)
    p.add_argument("--buckets", type=int)
    p.set_defaults(fn=cmd_train_classifier)

    p = sub.add_parser("label", parents=[common], help="label documents with a good and a bad LM")
    p.add_argument("docs", nargs="+", help="JSONL documents or plain text (one doc per line)")
    p.add_argument("--good", required=True)
    p.add_argument("--bad", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--good-ppl-max", type=float)
    p.add_argument("--bad-ppl-min", type=float)
    p.add_argument("--margin-mode", choices=("both", "ratio"))
    p.add_argument("--ratio-min", type=float)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("select-wiki", parents=[common], help="select Wikipedia pages by category keyword")
    p.add_argument("dump", help="Cirrus-style JSON dump (optionally gzipped)")
    p.add_argument("--keywords", nargs="+")
    p.add_argument("--keywords-file")
    p.add_argument("--label", help="attach this label to each selected document")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_select_wiki)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (runner.StageFailure, runner.RunInProgress) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
