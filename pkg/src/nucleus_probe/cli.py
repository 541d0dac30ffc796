"""Command-line entry point.

Subcommands::

    transform        UD -> MS conversion of a CoNLL-U file (refuses MS input)
    extract          probe datasets (tsv) for the chosen tasks and targets
    train-parser     train one parser; writes the model and its epoch log
    parse            parse a CoNLL-U file with a trained model
    eval             LAS / UAS of a prediction against gold
    extract-vectors  freeze a model and write per-layer vector files
    cbow             train CBOW type embeddings on a treebank's forms
    train-probe      majority baseline + diagnostic classifier on vector files
    report           cross-language tables (tsv, md) and figures
    pipeline         all stages in order, resumable from the output directory
    synth            write a synthetic toy treebank

Shared flags: --train, --dev, --repr {ud,ms}, --recursive, --seed, --epochs,
--out, --config. Flags override values from the ``key = value`` config file.
The NUCLEUS_PROBE_WORKERS environment variable caps probe-training threads.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import numeric_core as nc
from .config import RunConfig, load_config
from .conllu_io import ConlluFormatError, TreeValidationError, read_conllu, serialize_conllu, write_conllu
from .embeddings_cbow import read_embeddings, train_cbow, write_embeddings
from .parser.engine import evaluate_las, parse_treebank, train_parser, write_training_log, AlignmentError
from .parser.persistence import ContainerError, load_model, save_model
from .pipeline import (
    AlreadyMsError,
    DependencyError,
    Run,
    parser_config,
    run_pipeline,
    transform_treebank,
    write_report,
)
from .probing import LAYERS, ProbeConfig, ProbeReport, extract_vectors, probe_cell, read_vectors, write_vectors
from .synthetic import generate_treebank
from .stats_report import build_results
from .treebank_ops import TARGET_KINDS, TASKS, build_task_dataset, read_dataset, write_dataset
from .treebank_ops import UsageError as DataUsageError

EXIT_USAGE, EXIT_DEPENDENCY, EXIT_MISSING = 2, 3, 4


def _existing(path: Optional[str], what: str) -> str:
    if not path:
        raise nc.UsageError(f"--{what} is required")
    if not Path(path).exists():
        raise nc.UsageError(f"{what} file not found: {path}")
    return path


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--train", help="training treebank (CoNLL-U)")
    p.add_argument("--dev", help="development treebank (CoNLL-U)")
    p.add_argument("--repr", choices=("ud", "ms"))
    p.add_argument("--recursive", action="store_true", default=None, help="use subtree composition")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="parser training epochs (default 30)")
    p.add_argument("--out", help="output file or directory")


def _emit(treebank, out: Optional[str]) -> None:
    if out:
        write_conllu(treebank, out)
    else:
        sys.stdout.write(serialize_conllu(treebank))


def _cfg(args) -> RunConfig:
    keys = ("train", "dev", "repr", "recursive", "seed", "epochs", "out")
    return load_config(args.config, {k: getattr(args, k, None) for k in keys})


def _write_echo(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(cfg.echo(), encoding="utf-8")


def cmd_transform(args) -> int:
    src = _existing(args.input, "in")
    tb = transform_treebank(read_conllu(src), args.policy)
    _emit(tb, args.out)
    return 0


def cmd_extract(args) -> int:
    cfg = _cfg(args)
    tr = read_conllu(_existing(cfg.train, "train"))
    dv = read_conllu(_existing(cfg.dev, "dev")) if cfg.dev else []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [args.task] if args.task else list(TASKS)
    targets = [args.target] if args.target else ["FMV", "NFMV", "PUNCT"] + (["MAUX"] if cfg.repr == "ms" else [])
    for task in tasks:
        for target in targets:
            ds = build_task_dataset(tr, dv, task, target, cfg.repr, cfg.aux_lemmas or None)
            write_dataset(ds, out / f"{task}_{target}.tsv")
            print(f"{task}\t{target}\ttrain={len(ds.train)}\tdev={len(ds.dev)}")
    _write_echo(cfg, out)
    return 0


def cmd_train_parser(args) -> int:
    cfg = _cfg(args)
    tr = read_conllu(_existing(cfg.train, "train"), strict=True)
    dv = read_conllu(_existing(cfg.dev, "dev"), strict=True) if cfg.dev else []
    nc.set_deterministic(1)
    model, history = train_parser(tr, dv, parser_config(cfg, bool(args.recursive)))
    out = Path(args.out or "parser.model")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_training_log(history, out.with_suffix(".log.tsv"))
    _write_echo(cfg, out.parent)
    return 0


def cmd_parse(args) -> int:
    model = load_model(_existing(args.model, "model"))
    pred = parse_treebank(model, read_conllu(_existing(args.input, "in")))
    _emit(pred, args.out)
    return 0


def cmd_eval(args) -> int:
    gold = read_conllu(_existing(args.gold, "gold"))
    pred = read_conllu(_existing(args.pred, "pred"))
    rep = evaluate_las(gold, pred, punct=not args.no_punct)
    sys.stdout.write(rep.as_row())
    return 0


def cmd_extract_vectors(args) -> int:
    cfg = _cfg(args)
    model = load_model(_existing(args.model, "model")) if args.model else None
    w2v = read_embeddings(_existing(args.w2v, "w2v")) if args.w2v else None
    ds = read_dataset(_existing(args.dataset, "dataset"), cfg.repr)
    tbs = {"train": read_conllu(_existing(cfg.train, "train")),
           "dev": read_conllu(_existing(cfg.dev, "dev")) if cfg.dev else []}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for (layer, split), vs in extract_vectors(model, tbs, ds, args.layers, w2v).items():
        write_vectors(vs, out / f"{ds.task}_{ds.target_kind}_{layer}_{split}.vec")
    _write_echo(cfg, out)
    return 0


def cmd_cbow(args) -> int:
    cfg = _cfg(args)
    tb = read_conllu(_existing(cfg.train, "train"))
    table = train_cbow(([t.form for t in s.tokens] for s in tb), dim=cfg.cbow_dim, window=cfg.cbow_window,
                       min_count=cfg.cbow_min_count, negatives=cfg.cbow_negatives, epochs=cfg.cbow_epochs,
                       seed=cfg.seed, workers=args.workers)
    write_embeddings(table, args.out or "w2v.txt")
    return 0


def cmd_train_probe(args) -> int:
    cfg = _cfg(args)
    tr = read_vectors(_existing(args.train_vectors, "train-vectors"))
    dv = read_vectors(_existing(args.dev_vectors, "dev-vectors"))
    cell = probe_cell(tr, dv, ProbeConfig(args.kind, cfg.probe_hidden, cfg.probe_epochs, cfg.probe_batch,
                                          cfg.probe_lr, cfg.seed))
    if args.out:
        ProbeReport([cell]).write(args.out)
    fmt = lambda x: "NA" if x is None else f"{x:.1f}"  # noqa: E731
    print(f"{cell.task}\t{cell.layer}\t{cell.target_kind}\t{cell.classifier}\t"
          f"majority={fmt(cell.majority)}\taccuracy={fmt(cell.accuracy)}\tdelta={fmt(cell.delta)}")
    return 0


def cmd_report(args) -> int:
    reports = {}
    for item in args.reports:
        if "=" not in item:
            raise nc.UsageError(f"expected LANG=PATH, got {item!r}")
        lang, path = item.split("=", 1)
        reports[lang] = ProbeReport.read(_existing(path, "report"))
    out = Path(args.out or "report")
    written = write_report(reports, out, args.sd_mode)
    missing = build_results(reports).missing()
    for p in written:
        print(p)
    if missing:
        for row, col in missing:
            print(f"missing cell: {row} {'/'.join(col)}", file=sys.stderr)
        return EXIT_MISSING
    return 0


def cmd_pipeline(args) -> int:
    cfg = _cfg(args)
    if args.language:
        cfg.language = args.language
    if args.no_recursive:
        cfg.recursive = False
    if args.stage:
        run = Run(cfg, args.force)
        nc.set_deterministic(1)
        nc.seed_rng(cfg.seed)
        run.echo()
        {"transform": run.transform, "extract": run.extract, "train-parser": run.train_parsers,
         "cbow": run.cbow, "extract-vectors": run.extract_vectors, "train-probe": run.train_probes,
         "report": run.report}[args.stage]()
    else:
        run_pipeline(cfg, args.force)
    print(Path(cfg.out))
    return 0


def cmd_synth(args) -> int:
    _emit(generate_treebank(args.n, seed=args.seed, lexicon_seed=args.lexicon_seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nucleus-probe", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="convert UD auxiliary chains to MS")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--policy", choices=("right-neighbour", "maux"), default="right-neighbour")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("extract", help="write probe datasets")
    _common(p)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--target", choices=TARGET_KINDS)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-parser", help="train a parser")
    _common(p)
    p.set_defaults(func=cmd_train_parser)

    p = sub.add_parser("parse", help="parse with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval", help="attachment scores")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--no-punct", action="store_true", help="exclude punctuation tokens")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract-vectors", help="per-layer vectors for a probe dataset")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--w2v")
    p.add_argument("--dataset", required=True)
    p.add_argument("--layers", nargs="+", choices=LAYERS, default=["type", "char", "token"])
    p.set_defaults(func=cmd_extract_vectors)

    p = sub.add_parser("cbow", help="train CBOW embeddings")
    _common(p)
    p.add_argument("--workers", type=int, default=1, help=">1 enables non-deterministic parallel updates")
    p.set_defaults(func=cmd_cbow)

    p = sub.add_parser("train-probe", help="train and evaluate one diagnostic classifier")
    _common(p)
    p.add_argument("--train-vectors", required=True)
    p.add_argument("--dev-vectors", required=True)
    p.add_argument("--kind", choices=("mlp1", "linear"), default="mlp1")
    p.set_defaults(func=cmd_train_probe)

    p = sub.add_parser("report", help="cross-language result tables and figures")
    p.add_argument("reports", nargs="+", metavar="LANG=PATH")
    p.add_argument("--out")
    p.add_argument("--sd-mode", choices=("sample", "population"), default="sample")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage")
    _common(p)
    p.add_argument("--language", help="row name in the report")
    p.add_argument("--no-recursive", action="store_true", help="skip the composing parser")
    p.add_argument("--stage", choices=("transform", "extract", "train-parser", "cbow", "extract-vectors",
                                       "train-probe", "report"), help="run a single stage")
    p.add_argument("--force", action="store_true", help="recompute existing artifacts")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="generate a synthetic treebank")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AlreadyMsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (nc.UsageError, DataUsageError, ConlluFormatError, TreeValidationError, ContainerError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # malformed vector, embedding or dataset files
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
