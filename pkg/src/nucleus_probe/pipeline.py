"""End-to-end experiment stages writing plain-file artifacts into one directory.

Each stage reads what earlier stages left on disk and skips itself when its
own outputs already exist, so a run can be resumed or audited mid-way.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from . import numeric_core as nc
from .config import RunConfig
from .conllu_io import read_conllu, write_conllu
from .embeddings_cbow import read_embeddings, train_cbow, write_embeddings
from .parser.engine import train_parser, write_training_log
from .parser.model import ParserConfig
from .parser.persistence import load_model, save_model
from .probing import (
    ProbeConfig,
    ProbeReport,
    extract_vectors,
    probe_cell,
    read_vectors,
    write_vectors,
)
from .stats_report import build_results, plot_results, render
from .treebank_ops import build_task_dataset, looks_like_ms, read_dataset, transform_ud_to_ms, write_dataset

logger = logging.getLogger(__name__)

STAGES = ("transform", "extract", "train-parser", "cbow", "extract-vectors", "train-probe", "report")


class DependencyError(RuntimeError):
    """A stage ran before the artifacts it consumes exist."""


class AlreadyMsError(nc.UsageError):
    pass


def targets_for(repr_: str) -> list[str]:
    return ["FMV", "NFMV", "PUNCT"] if repr_ == "ud" else ["FMV", "NFMV", "MAUX", "PUNCT"]


def layers_for(target: str, repr_: str, recursive: bool) -> list[str]:
    if target == "PUNCT":
        return ["token"]
    layers = ["type", "char", "token", "w2v"]
    composing = {"ud": "NFMV", "ms": "MAUX"}[repr_]
    if recursive and target == composing:
        layers.append("composed")
    return layers


def workers() -> int:
    try:
        return max(1, int(os.environ.get("NUCLEUS_PROBE_WORKERS", "1")))
    except ValueError:
        return 1


def parser_config(cfg: RunConfig, recursive: bool) -> ParserConfig:
    return ParserConfig(
        recursive=recursive, epochs=cfg.epochs, seed=cfg.seed, exploration=cfg.exploration,
        word_dropout=cfg.word_dropout, lr=cfg.lr, lstm_layers=cfg.lstm_layers, lstm_hidden=cfg.lstm_hidden,
        mlp_hidden=cfg.mlp_hidden, punct_in_las=cfg.punct_in_las,
    )


def transform_treebank(treebank, policy: str = "right-neighbour"):
    if looks_like_ms(treebank):
        raise AlreadyMsError("input already MS: auxiliary chains already head their main verbs")
    return [transform_ud_to_ms(s, policy) for s in treebank]


class Run:
    def __init__(self, cfg: RunConfig, force: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.force = force

    # paths
    def p(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    def _need(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise DependencyError(f"{path} is missing: run the {stage} stage first")
        return path

    def _skip(self, *paths: Path) -> bool:
        return not self.force and all(p.exists() for p in paths)

    def echo(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.p("config.txt").write_text(self.cfg.echo(), encoding="utf-8")
        self.p("VERSION").write_text(__version__ + "\n", encoding="utf-8")

    # stages
    def transform(self) -> None:
        cfg = self.cfg
        for split in ("train", "dev"):
            src = getattr(cfg, split)
            if not src or not Path(src).is_file():
                raise nc.UsageError(f"{split} treebank not found: {src}")
        dst = [self.p("data", "train.conllu"), self.p("data", "dev.conllu")]
        if self._skip(*dst):
            return
        self.p("data").mkdir(parents=True, exist_ok=True)
        for split, path in zip(("train", "dev"), dst):
            tb = read_conllu(getattr(cfg, split))
            if cfg.repr == "ms":
                tb = transform_treebank(tb, cfg.reattach_policy)
            write_conllu(tb, path)

    def treebank(self, split: str):
        return read_conllu(self._need(self.p("data", f"{split}.conllu"), "transform"))

    def dataset_path(self, task: str, target: str) -> Path:
        return self.p("datasets", f"{task}_{target}.tsv")

    def extract(self) -> None:
        cfg = self.cfg
        todo = [(t, k) for t in cfg.tasks for k in targets_for(cfg.repr)]
        if self._skip(*(self.dataset_path(t, k) for t, k in todo)):
            return
        tr, dv = self.treebank("train"), self.treebank("dev")
        self.p("datasets").mkdir(parents=True, exist_ok=True)
        lemmas = cfg.aux_lemmas or None
        counts = ["task\ttarget_kind\ttrain\tdev"]
        for task, target in todo:
            ds = build_task_dataset(tr, dv, task, target, cfg.repr, lemmas)
            write_dataset(ds, self.dataset_path(task, target))
            counts.append(f"{task}\t{target}\t{len(ds.train)}\t{len(ds.dev)}")
        self.p("datasets", "counts.tsv").write_text("\n".join(counts) + "\n", encoding="utf-8")

    def model_names(self) -> list[str]:
        return ["bas", "rc"] if self.cfg.recursive else ["bas"]

    def train_parsers(self) -> None:
        tr, dv = self.treebank("train"), self.treebank("dev")
        self.p("models").mkdir(parents=True, exist_ok=True)
        for name in self.model_names():
            path = self.p("models", f"{name}.model")
            if self._skip(path):
                continue
            model, history = train_parser(tr, dv, parser_config(self.cfg, name == "rc"))
            save_model(model, path)
            write_training_log(history, self.p("models", f"{name}.log.tsv"))

    def cbow(self) -> None:
        path = self.p("embeddings", "w2v.txt")
        if self._skip(path):
            return
        cfg = self.cfg
        tr = self.treebank("train")
        path.parent.mkdir(parents=True, exist_ok=True)
        table = train_cbow(([t.form for t in s.tokens] for s in tr), dim=cfg.cbow_dim, window=cfg.cbow_window,
                           min_count=cfg.cbow_min_count, negatives=cfg.cbow_negatives, epochs=cfg.cbow_epochs,
                           seed=cfg.seed)
        write_embeddings(table, path)

    def vector_path(self, task: str, target: str, layer: str, split: str) -> Path:
        return self.p("vectors", f"{task}_{target}_{layer}_{split}.vec")

    def cells(self):
        cfg = self.cfg
        for task in cfg.tasks:
            for target in targets_for(cfg.repr):
                for layer in layers_for(target, cfg.repr, cfg.recursive):
                    yield task, target, layer

    def extract_vectors(self) -> None:
        cfg = self.cfg
        todo = list(self.cells())
        if self._skip(*(self.vector_path(t, k, lay, sp) for t, k, lay in todo for sp in ("train", "dev"))):
            return
        tbs = {"train": self.treebank("train"), "dev": self.treebank("dev")}
        bas = load_model(self._need(self.p("models", "bas.model"), "train-parser"))
        rc = load_model(self._need(self.p("models", "rc.model"), "train-parser")) if cfg.recursive else None
        w2v = read_embeddings(self._need(self.p("embeddings", "w2v.txt"), "cbow"))
        self.p("vectors").mkdir(parents=True, exist_ok=True)
        for task in cfg.tasks:
            for target in targets_for(cfg.repr):
                ds = read_dataset(self._need(self.dataset_path(task, target), "extract"), cfg.repr)
                layers = layers_for(target, cfg.repr, cfg.recursive)
                plain = [lay for lay in layers if lay != "composed"]
                sets = extract_vectors(bas, tbs, ds, plain, w2v)
                if "composed" in layers:
                    sets.update(extract_vectors(rc, tbs, ds, ["composed"]))
                for (layer, split), vs in sets.items():
                    write_vectors(vs, self.vector_path(task, target, layer, split))

    def train_probes(self) -> None:
        path = self.p("probes", "report.tsv")
        if self._skip(path):
            return
        cfg = self.cfg
        jobs = []
        for task, target, layer in self.cells():
            tr = self._need(self.vector_path(task, target, layer, "train"), "extract-vectors")
            dv = self._need(self.vector_path(task, target, layer, "dev"), "extract-vectors")
            for kind in cfg.classifiers:
                seed = (cfg.seed * 1_000_003 + zlib.crc32(f"{task}/{target}/{layer}/{kind}".encode())) % 2**31
                pc = ProbeConfig(kind, cfg.probe_hidden, cfg.probe_epochs, cfg.probe_batch, cfg.probe_lr, seed)
                jobs.append((tr, dv, pc))

        def run(job):
            tr, dv, pc = job
            return probe_cell(read_vectors(tr), read_vectors(dv), pc)

        n = workers()
        if n > 1:
            with ThreadPoolExecutor(n) as ex:
                cells = list(ex.map(run, jobs))
        else:
            cells = [run(j) for j in jobs]
        path.parent.mkdir(parents=True, exist_ok=True)
        ProbeReport(cells).write(path)

    def report(self) -> list[Path]:
        rep = ProbeReport.read(self._need(self.p("probes", "report.tsv"), "train-probe"))
        return write_report({self.cfg.language: rep}, self.p("report"), self.cfg.sd_mode)

    def run_all(self) -> None:
        self.echo()
        self.transform()
        self.extract()
        self.train_parsers()
        self.cbow()
        self.extract_vectors()
        self.train_probes()
        self.report()


def write_report(reports: dict[str, ProbeReport], out_dir, sd_mode: str = "sample") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = build_results(reports, sd_mode)
    (out_dir / "results.tsv").write_text(render(m, "tsv"), encoding="utf-8")
    (out_dir / "results.md").write_text(render(m, "md"), encoding="utf-8")
    figures = plot_results(m, out_dir)
    return [out_dir / "results.tsv", out_dir / "results.md", *figures]


def run_pipeline(cfg: RunConfig, force: bool = False) -> Run:
    run = Run(cfg, force)
    nc.set_deterministic(1)
    nc.seed_rng(cfg.seed)
    run.run_all()
    return run
