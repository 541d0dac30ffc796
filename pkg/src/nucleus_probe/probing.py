"""Vector extraction from a frozen parser and diagnostic classifiers."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from . import numeric_core as nc
from .conllu_io import Sentence
from .embeddings_cbow import TypeEmbeddingTable
from .parser.engine import parse
from .parser.model import NumpyScorer, ParserModel
from .treebank_ops import ProbeInstance, TaskDataset

LAYERS = ("type", "char", "token", "composed", "w2v")
CLASSIFIERS = ("mlp1", "linear")


@dataclass
class VectorSet:
    layer: str
    target_kind: str
    task: str
    split: str
    ids: list[str]
    labels: list[str]
    vectors: np.ndarray  # (count, dim)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1]) if self.vectors.ndim == 2 else 0

    def __len__(self) -> int:
        return len(self.ids)


def instance_id(inst: ProbeInstance) -> str:
    return f"{inst.sentence_ref}:{inst.target_id}"


class _SentenceCache:
    """Encodes / parses each sentence at most once per extraction."""

    def __init__(self, model: ParserModel):
        self.model = model
        self.scorer = NumpyScorer(model)
        self.tokens: dict[int, np.ndarray] = {}
        self.composed: dict[int, np.ndarray] = {}

    def token(self, ref: int, s: Sentence) -> np.ndarray:
        if ref not in self.tokens:
            with torch.no_grad():
                self.tokens[ref] = self.model.encode(s).numpy()
        return self.tokens[ref]

    def composed_for(self, ref: int, s: Sentence) -> np.ndarray:
        if ref not in self.composed:
            res = parse(self.model, s, self.scorer)
            self.composed[ref] = res.composed
            self.tokens.setdefault(ref, res.token_vectors)
        return self.composed[ref]


def extract_vectors(
    model: Optional[ParserModel],
    treebanks: Mapping[str, Sequence[Sentence]],
    dataset: TaskDataset,
    layers: Sequence[str],
    w2v: Optional[TypeEmbeddingTable] = None,
) -> dict[tuple[str, str], VectorSet]:
    """Vectors per (layer, split) for every instance of ``dataset``.

    ``treebanks`` maps split name to the sentences the instances refer to.
    Sentence vectors come from the frozen model; the w2v layer needs only the table.
    """
    for layer in layers:
        if layer not in LAYERS:
            raise nc.UsageError(f"unknown layer {layer!r}; expected one of {LAYERS}")
        if layer == "composed" and (model is None or not model.config.recursive):
            raise nc.UsageError("composed vectors need a recursive parser model")
        if layer == "w2v" and w2v is None:
            raise nc.UsageError("the w2v layer needs an embedding table")
        if layer not in ("w2v",) and model is None:
            raise nc.UsageError(f"the {layer} layer needs a parser model")
    out: dict[tuple[str, str], VectorSet] = {}
    for split in ("train", "dev"):
        insts = getattr(dataset, split)
        tb = treebanks.get(split, [])
        cache = _SentenceCache(model) if model is not None else None
        forms = [tb[i.sentence_ref][i.target_id].form for i in insts]
        ids = [instance_id(i) for i in insts]
        labels = [i.label(dataset.task) for i in insts]
        for layer in layers:
            if not insts:
                vecs = np.zeros((0, 0))
            elif layer == "type":
                with torch.no_grad():
                    vecs = model.type_vectors(forms).numpy()
            elif layer == "char":
                with torch.no_grad():
                    vecs = model.char_vectors(forms).numpy()
            elif layer == "w2v":
                vecs = np.stack([w2v.lookup(f) for f in forms])
            elif layer == "token":
                vecs = np.stack([cache.token(i.sentence_ref, tb[i.sentence_ref])[i.target_id] for i in insts])
            else:
                vecs = np.stack([cache.composed_for(i.sentence_ref, tb[i.sentence_ref])[i.target_id] for i in insts])
            out[(layer, split)] = VectorSet(layer, dataset.target_kind, dataset.task, split, ids, labels,
                                            np.ascontiguousarray(vecs, dtype=np.float64))
    return out


# -- vector files ------------------------------------------------------------


def write_vectors(vs: VectorSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# layer={vs.layer}\ttarget_kind={vs.target_kind}\ttask={vs.task}\t"
                 f"split={vs.split}\tdim={vs.dim}\tcount={len(vs)}\n")
        for iid, lab, row in zip(vs.ids, vs.labels, vs.vectors):
            fh.write(f"{iid}\t{lab}\t{' '.join(repr(float(x)) for x in row)}\n")


def read_vectors(path) -> VectorSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing vector file header")
    head = dict(kv.split("=", 1) for kv in lines[0][2:].split("\t"))
    dim, count = int(head["dim"]), int(head["count"])
    if len(lines) - 1 != count:
        raise ValueError(f"{path}: header declares {count} vectors, found {len(lines) - 1}")
    ids, labels, rows = [], [], []
    for k, line in enumerate(lines[1:], start=2):
        iid, lab, vals = line.split("\t")
        row = [float(x) for x in vals.split(" ")] if vals else []
        if len(row) != dim:
            raise nc.ShapeError(f"{path}:{k}: expected {dim} values, got {len(row)}")
        ids.append(iid)
        labels.append(lab)
        rows.append(row)
    vecs = np.array(rows, dtype=np.float64).reshape(count, dim)
    return VectorSet(head["layer"], head["target_kind"], head["task"], head["split"], ids, labels, vecs)


# -- baselines and probes ----------------------------------------------------


def majority_label(train_labels: Sequence[str]) -> str:
    if not train_labels:
        raise nc.UsageError("majority baseline needs training labels")
    counts = Counter(train_labels)
    top = max(counts.values())
    # Counter preserves first-seen order, so ties go to the earliest label
    return next(lab for lab, c in counts.items() if c == top)


def majority_baseline(train_labels: Sequence[str], dev_labels: Sequence[str]) -> Optional[float]:
    """Dev accuracy (percent) of always predicting the training majority; None without dev data."""
    maj = majority_label(train_labels)
    if not dev_labels:
        return None
    return 100.0 * sum(lab == maj for lab in dev_labels) / len(dev_labels)


@dataclass
class ProbeConfig:
    kind: str = "mlp1"
    hidden: int = 100
    epochs: int = 20
    batch: int = 32
    lr: float = 1e-3
    seed: int = 1


@dataclass
class ProbeModel:
    kind: str
    labels: list[str]
    store: nc.ParamStore
    dim: int

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        st = self.store
        if self.kind == "mlp1":
            x = torch.tanh(x @ st["W1"].T + st["b1"])
        return x @ st["W2"].T + st["b2"]

    def predict(self, vectors: np.ndarray) -> list[str]:
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise nc.ShapeError(f"probe expects dim {self.dim}, got shape {vectors.shape}")
        with torch.no_grad():
            idx = self.logits(torch.from_numpy(vectors)).argmax(dim=1).tolist()
        return [self.labels[i] for i in idx]


def train_probe(train: VectorSet, config: ProbeConfig = ProbeConfig()) -> ProbeModel:
    if config.kind not in CLASSIFIERS:
        raise nc.UsageError(f"unknown classifier {config.kind!r}; expected one of {CLASSIFIERS}")
    if len(train) == 0:
        raise nc.UsageError("cannot train a probe without training vectors")
    labels = sorted(set(train.labels))
    lab_id = {lab: i for i, lab in enumerate(labels)}
    y = torch.as_tensor([lab_id[lab] for lab in train.labels], dtype=torch.long)
    x = torch.from_numpy(train.vectors)
    gen = torch.Generator()
    gen.manual_seed(config.seed)
    st = nc.ParamStore(gen)
    d = train.dim
    if config.kind == "mlp1":
        st.add("W1", (config.hidden, d))
        st.add("b1", (config.hidden,), const=0.0)
        st.add("W2", (len(labels), config.hidden))
    else:
        st.add("W2", (len(labels), d))
    st.add("b2", (len(labels),), const=0.0)
    pm = ProbeModel(config.kind, labels, st, d)
    params = st.tensors()
    adam = nc.AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = torch.from_numpy(rng.permutation(len(train)))
        for start in range(0, len(train), config.batch):
            b = order[start:start + config.batch]
            loss, _ = nc.softmax_xent(pm.logits(x[b]), y[b])
            st.zero_grad()
            nc.backward(loss)
            nc.adam_update(params, [p.grad for p in params], adam)
    return pm


def eval_probe(pm: ProbeModel, dev: VectorSet) -> Optional[float]:
    if len(dev) == 0:
        return None
    pred = pm.predict(dev.vectors)
    return 100.0 * sum(p == g for p, g in zip(pred, dev.labels)) / len(dev)


def shuffled(vs: VectorSet, seed: int) -> VectorSet:
    """Copy of ``vs`` with labels permuted: the null-control input."""
    perm = np.random.default_rng(seed).permutation(len(vs))
    return VectorSet(vs.layer, vs.target_kind, vs.task, vs.split, vs.ids, [vs.labels[i] for i in perm], vs.vectors)


# -- reports -----------------------------------------------------------------


@dataclass
class ProbeCell:
    task: str
    layer: str
    target_kind: str
    classifier: str
    majority: Optional[float]
    accuracy: Optional[float]
    n_train: int = 0
    n_dev: int = 0

    @property
    def delta(self) -> Optional[float]:
        if self.majority is None or self.accuracy is None:
            return None
        # from the displayed values, so that the three columns always add up
        return round(round(self.accuracy, 1) - round(self.majority, 1), 1)

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.task, self.layer, self.target_kind, self.classifier)


REPORT_COLUMNS = ("task", "layer", "target_kind", "classifier", "majority", "accuracy", "delta", "n_train", "n_dev")


def _fmt(x: Optional[float]) -> str:
    return "NA" if x is None else f"{x:.1f}"


@dataclass
class ProbeReport:
    cells: list[ProbeCell] = field(default_factory=list)

    def get(self, task: str, layer: str, target_kind: str, classifier: str = "mlp1") -> Optional[ProbeCell]:
        for c in self.cells:
            if c.key == (task, layer, target_kind, classifier):
                return c
        return None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for c in sorted(self.cells, key=lambda c: c.key):
                w.writerow([c.task, c.layer, c.target_kind, c.classifier, _fmt(c.majority), _fmt(c.accuracy),
                            _fmt(c.delta), c.n_train, c.n_dev])

    @classmethod
    def read(cls, path) -> "ProbeReport":
        def num(s):
            return None if s == "NA" else float(s)

        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t"))
        return cls([ProbeCell(r["task"], r["layer"], r["target_kind"], r["classifier"], num(r["majority"]),
                              num(r["accuracy"]), int(r["n_train"]), int(r["n_dev"])) for r in rows])


def probe_cell(train: VectorSet, dev: VectorSet, config: ProbeConfig = ProbeConfig()) -> ProbeCell:
    """Majority baseline and probe accuracy for one (task, layer, target, classifier)."""
    maj = majority_baseline(train.labels, dev.labels) if len(train) else None
    acc = eval_probe(train_probe(train, config), dev) if len(train) else None
    return ProbeCell(train.task, train.layer, train.target_kind, config.kind, maj, acc, len(train), len(dev))
