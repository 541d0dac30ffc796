"""Training, greedy parsing and attachment-score evaluation.

Each sentence is processed in two passes. A decision pass walks the
transition system with detached numpy copies of the scorer (cheap per step)
and records the feature rows of every configuration that violates the
margin. A loss pass then rebuilds those scores in one batch on the autograd
graph of the sentence encoding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .. import numeric_core as nc
from ..conllu_io import Sentence, deprel_base
from .model import NumpyScorer, ParserConfig, ParserModel, Vocab, is_composition_arc
from .transitions import (
    LEFT,
    RIGHT,
    ROOT,
    Configuration,
    Gold,
    apply_transition,
    labeled_cost,
    legal_transitions,
    oracle_costs,
)

logger = logging.getLogger(__name__)


class AlignmentError(ValueError):
    pass


@dataclass
class Composition:
    head_row: int
    head_version: int
    dep_row: int
    dep_version: int
    direction: int  # 0 left-aux, 1 right-aux


@dataclass
class Trace:
    """What the loss pass needs to rebuild the violating scores."""

    rows: list[tuple[int, int, int]] = field(default_factory=list)
    versions: list[tuple[int, int, int]] = field(default_factory=list)
    good: list[np.ndarray] = field(default_factory=list)
    bad: list[np.ndarray] = field(default_factory=list)
    compositions: list[Composition] = field(default_factory=list)


@dataclass
class ParseResult:
    heads: list[int]  # 1-based tokens; index 0 unused
    labels: list[Optional[str]]
    token_vectors: np.ndarray  # (n + 1, D), row 0 = root
    composed: Optional[np.ndarray] = None  # final c_i per token (recursive mode)
    n_compositions: int = 0
    transitions: list[tuple[str, Optional[str]]] = field(default_factory=list)


def _walk(
    model: ParserModel,
    scorer: NumpyScorer,
    sentence: Sentence,
    base: np.ndarray,
    gold: Optional[Gold] = None,
    rng: Optional[np.random.Generator] = None,
    explore: float = 0.0,
    margin: float = 1.0,
):
    """Greedy walk over one sentence; ``base`` has rows 0..n (root first) then the pad row."""
    n = len(sentence)
    pad = n + 1
    acts = model.actions
    recursive = model.config.recursive
    base_proj = scorer.prepare(base)
    versions: list[np.ndarray] = []
    c_proj: list = []
    cur = list(range(n + 2))
    if recursive:
        versions = [base[r] for r in range(n + 2)]
        c_proj_all = scorer.project_c(base)
        c_proj = [[c_proj_all[k][r] for k in range(3)] for r in range(n + 2)]
    trace = Trace()
    taken: list[tuple[str, Optional[str]]] = []
    c = Configuration.initial(n)
    while not c.is_terminal():
        s0 = c.stack[-1] if c.stack else pad
        s1 = c.stack[-2] if len(c.stack) > 1 else pad
        b0 = c.buffer[0] if c.buffer else pad
        rows = (s1, s0, b0)
        vers = (cur[s1], cur[s0], cur[b0])
        sc = scorer.scores(base_proj, c_proj, rows, vers)
        legal = legal_transitions(c)
        mask = acts.legal_mask(legal, b0 == ROOT)
        legal_ids = np.flatnonzero(mask)
        best = legal_ids[np.argmax(sc[legal_ids])]
        if gold is not None:
            costs = oracle_costs(c, gold)
            lc = np.array([labeled_cost(c, gold, *acts.items[a], costs) for a in legal_ids])
            lo = lc.min()
            good = legal_ids[lc == lo]
            bad = legal_ids[lc > lo]
            best_good = good[np.argmax(sc[good])]
            if bad.size and sc[best_good] - sc[bad].max() < margin:
                trace.rows.append(rows)
                trace.versions.append(vers)
                trace.good.append(good)
                trace.bad.append(bad)
            if best not in good and not (rng is not None and rng.random() < explore):
                best = best_good
        kind, label = acts.items[best]
        arc = apply_transition(c, kind, label)
        taken.append((kind, label))
        if recursive and arc is not None and is_composition_arc(sentence, arc[0], arc[1], label):
            h, d = arc
            direction = 0 if d < h else 1
            new = scorer.compose(
                np.concatenate([base[h], versions[cur[h]]]),
                np.concatenate([base[d], versions[cur[d]]]),
                direction,
            )
            trace.compositions.append(Composition(h, cur[h], d, cur[d], direction))
            versions.append(new)
            c_proj.append(scorer.project_c(new))
            cur[h] = len(versions) - 1
    composed = None
    if recursive:
        composed = np.stack([versions[cur[r]] for r in range(n + 1)])
    return c, trace, taken, composed


def _with_pad(model: ParserModel, enc: torch.Tensor) -> torch.Tensor:
    return torch.cat([enc, model.store["pad_vec"].unsqueeze(0)], dim=0)


def trace_loss(model: ParserModel, base: torch.Tensor, trace: Trace) -> torch.Tensor:
    """Summed margin hinge over recorded configurations, on the autograd graph."""
    if not trace.rows:
        return base.sum() * 0.0
    st = model.store
    margin = model.config.margin
    versions_t = None
    if model.config.recursive:
        cs = [base[r] for r in range(base.shape[0])]
        for comp in trace.compositions:
            cs.append(
                model.compose(
                    torch.cat([base[comp.head_row], cs[comp.head_version]]),
                    torch.cat([base[comp.dep_row], cs[comp.dep_version]]),
                    comp.direction,
                )
            )
        versions_t = torch.stack(cs)
    rows = torch.as_tensor(trace.rows, dtype=torch.long)
    vers = torch.as_tensor(trace.versions, dtype=torch.long)
    pre = st["mlp_b1"].expand(len(trace.rows), -1)
    for k, (a, b) in enumerate(model.scorer_blocks()):
        pre = pre + base[rows[:, k]] @ a.T
        if b is not None:
            pre = pre + versions_t[vers[:, k]] @ b.T
    scores = torch.tanh(pre) @ st["mlp_W2"].T + st["mlp_b2"]
    n_act = scores.shape[1]
    good = torch.zeros((len(trace.rows), n_act), dtype=torch.bool)
    bad = torch.zeros_like(good)
    for i, (g, b) in enumerate(zip(trace.good, trace.bad)):
        good[i, torch.as_tensor(g)] = True
        bad[i, torch.as_tensor(b)] = True
    neg = torch.finfo(scores.dtype).min
    best_good = scores.masked_fill(~good, neg).max(dim=1).values
    best_bad = scores.masked_fill(~bad, neg).max(dim=1).values
    return torch.clamp(margin - best_good + best_bad, min=0.0).sum()


def sentence_loss(model: ParserModel, sentence: Sentence, rng: np.random.Generator,
                  train: bool = True, explore: Optional[float] = None) -> torch.Tensor:
    """Loss of one greedy training pass over ``sentence`` (graph attached)."""
    word_ids = model.dropout_ids(sentence, rng) if train else None
    base = _with_pad(model, model.encode(sentence, word_ids))
    gold = Gold.from_heads(sentence.heads, [t.deprel for t in sentence.tokens])
    scorer = NumpyScorer(model)
    k = model.config.exploration if explore is None else explore
    _, trace, _, _ = _walk(model, scorer, sentence, base.detach().numpy(), gold, rng, k, model.config.margin)
    return trace_loss(model, base, trace)


@torch.no_grad()
def parse(model: ParserModel, sentence: Sentence, scorer: Optional[NumpyScorer] = None) -> ParseResult:
    if len(sentence) == 0:
        return ParseResult([0], [None], np.zeros((1, model.config.token_dim)))
    scorer = scorer or NumpyScorer(model)
    enc = model.encode(sentence)
    base = _with_pad(model, enc).numpy()
    c, trace, taken, composed = _walk(model, scorer, sentence, base)
    return ParseResult(c.heads, c.labels, enc.numpy(), composed, len(trace.compositions), taken)


def parse_treebank(model: ParserModel, treebank: Sequence[Sentence]) -> list[Sentence]:
    scorer = NumpyScorer(model)
    out = []
    for s in treebank:
        res = parse(model, s, scorer)
        pred = s.copy()
        for t in pred.tokens:
            t.head = res.heads[t.id]
            t.deprel = res.labels[t.id]
        out.append(pred)
    return out


@dataclass
class EvalReport:
    las: float
    uas: float
    label_acc: float
    tokens: int
    per_label: dict[str, tuple[int, int]]  # gold label -> (correct labeled attachments, total)

    def as_row(self) -> str:
        return f"LAS\t{self.las:.2f}\nUAS\t{self.uas:.2f}\nLA\t{self.label_acc:.2f}\ntokens\t{self.tokens}\n"


def _is_punct(tok) -> bool:
    return tok.upos == "PUNCT" or deprel_base(tok.deprel) == "punct"


def evaluate_las(gold: Sequence[Sentence], pred: Sequence[Sentence], punct: bool = True) -> EvalReport:
    """Labeled / unlabeled attachment scores in percent; labels compared in full."""
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold vs {len(pred)} predicted sentences")
    total = head_ok = both_ok = label_ok = 0
    per: dict[str, list[int]] = {}
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise AlignmentError(f"sentence {k}: {len(g)} gold vs {len(p)} predicted tokens")
        for gt, pt in zip(g.tokens, p.tokens):
            if not punct and _is_punct(gt):
                continue
            total += 1
            h = gt.head == pt.head
            lab = gt.deprel == pt.deprel
            head_ok += h
            label_ok += lab
            both_ok += h and lab
            cell = per.setdefault(gt.deprel, [0, 0])
            cell[0] += h and lab
            cell[1] += 1
    if total == 0:
        return EvalReport(float("nan"), float("nan"), float("nan"), 0, {})
    pct = lambda x: 100.0 * x / total  # noqa: E731
    return EvalReport(pct(both_ok), pct(head_ok), pct(label_ok), total, {k: tuple(v) for k, v in sorted(per.items())})


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_las: float


def train_parser(
    tb_train: Sequence[Sentence],
    tb_dev: Sequence[Sentence],
    config: ParserConfig,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> tuple[ParserModel, list[EpochLog]]:
    """Greedy per-sentence training; returns the best-dev-LAS snapshot and the epoch log."""
    if not tb_train:
        raise nc.UsageError("empty training treebank")
    nc.seed_rng(config.seed)
    model = ParserModel(Vocab.build(tb_train), config)
    params = model.parameters()
    adam = nc.AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    history: list[EpochLog] = []
    best_las, best_snap = -math.inf, None
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for i in rng.permutation(len(tb_train)):
            sent = tb_train[int(i)]
            if len(sent) == 0:
                continue
            loss = sentence_loss(model, sent, rng)
            if loss.requires_grad and float(loss.detach()) > 0:
                model.store.zero_grad()
                nc.backward(loss)
                nc.adam_update(params, [p.grad for p in params], adam)
            total += float(loss.detach())
        if tb_dev:
            dev_las = evaluate_las(tb_dev, parse_treebank(model, tb_dev), config.punct_in_las).las
        else:
            dev_las = float("nan")
        entry = EpochLog(epoch, total, dev_las)
        history.append(entry)
        logger.info("epoch %d loss %.3f dev LAS %.2f", epoch, total, dev_las)
        if on_epoch:
            on_epoch(entry)
        score = dev_las if not math.isnan(dev_las) else epoch
        if score > best_las:
            best_las, best_snap = score, model.store.snapshot()
    model.store.restore(best_snap)
    return model, history


def write_training_log(history: Sequence[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tdev_LAS\n")
        for e in history:
            fh.write(f"{e.epoch}\t{e.train_loss:.6f}\t{e.dev_las:.4f}\n")
