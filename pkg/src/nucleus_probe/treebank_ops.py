"""Extraction of verbal constructions and probe task data from UD treebanks.

Finite main verbs (FMVs), auxiliary verb constructions (AVCs) in UD style
(main verb heads its auxiliaries) and in Mel'cuk style (MS, the outermost
auxiliary heads a chain ending in the main verb), nearest punctuation
controls, and the transitivity / agreement labels.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence

from .conllu_io import Sentence, TreeValidationError, deprel_base, tree_problems, validate_tree

logger = logging.getLogger(__name__)

VERBAL = frozenset({"VERB", "AUX"})
OBJECT_RELS = frozenset({"obj", "dobj"})
TRANSITIVE = "transitive"
INTRANSITIVE = "intransitive"

TASKS = ("transitivity", "agreement")
TARGET_KINDS = ("FMV", "NFMV", "MAUX", "PUNCT")
REPRESENTATIONS = ("ud", "ms")

# target kinds that make sense for each representation
_VALID_TARGETS = {
    "ud": {"FMV", "PUNCT", "NFMV", "MAUX"},
    "ms": {"FMV", "PUNCT", "NFMV", "MAUX"},
}

ReattachPolicy = Literal["right-neighbour", "maux"]


class UsageError(ValueError):
    """Invalid combination of arguments."""


@dataclass
class AvcRecord:
    sentence_ref: int
    main_verb_id: int
    aux_ids: list[int]
    head_of_subtree: int

    @property
    def members(self) -> frozenset[int]:
        return frozenset(self.aux_ids) | {self.main_verb_id}


@dataclass
class ProbeInstance:
    sentence_ref: int
    target_id: int
    target_kind: str
    transitivity_label: str
    agreement_label: Optional[str] = None

    def label(self, task: str) -> Optional[str]:
        return self.transitivity_label if task == "transitivity" else self.agreement_label


@dataclass
class TaskDataset:
    task: str
    target_kind: str
    representation: str
    train: list[ProbeInstance] = field(default_factory=list)
    dev: list[ProbeInstance] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "dev": len(self.dev)}


def _is_aux_rel(deprel: str) -> bool:
    return deprel_base(deprel) == "aux"


def _verbal(s: Sentence, tid: int) -> bool:
    return s[tid].upos in VERBAL


def collect_fmvs(
    s: Sentence,
    aux_lemma_filter: Optional[Iterable[str]] = None,
    exclude_heads_of_aux: bool = True,
) -> list[int]:
    """Finite verbs that are not part of a larger verbal construction.

    A candidate carries ``VerbForm=Fin`` and is not attached with an aux/cop
    relation. With ``exclude_heads_of_aux`` it also must not govern aux/cop
    children. ``aux_lemma_filter`` restricts which aux/cop dependents count.
    """
    allowed = set(aux_lemma_filter) if aux_lemma_filter is not None else None

    def counts_as_function_word(tok) -> bool:
        if deprel_base(tok.deprel) not in ("aux", "cop"):
            return False
        return allowed is None or tok.lemma in allowed

    governs = set()
    for tok in s.tokens:
        if counts_as_function_word(tok) and tok.head > 0:
            governs.add(tok.head)
    out = []
    for tok in s.tokens:
        if tok.feats.get("VerbForm") != "Fin":
            continue
        if counts_as_function_word(tok):
            continue
        if exclude_heads_of_aux and tok.id in governs:
            continue
        out.append(tok.id)
    return out


def collect_avcs_ud(
    s: Sentence, sentence_ref: int = 0, aux_lemma_filter: Optional[Iterable[str]] = None
) -> list[AvcRecord]:
    """One record per verbal main verb heading at least one verbal aux dependent."""
    allowed = set(aux_lemma_filter) if aux_lemma_filter is not None else None
    by_mv: dict[int, list[int]] = {}
    for tok in s.tokens:  # left to right
        if not _is_aux_rel(tok.deprel) or tok.head == 0:
            continue
        if not (_verbal(s, tok.id) and _verbal(s, tok.head)):
            continue
        if allowed is not None and tok.lemma not in allowed:
            continue
        by_mv.setdefault(tok.head, []).append(tok.id)
    return [
        AvcRecord(sentence_ref, mv, sorted(auxes), mv)
        for mv, auxes in sorted(by_mv.items())
    ]


def _aux_children(s: Sentence, tid: int) -> list[int]:
    return [
        t.id for t in s.tokens
        if t.head == tid and _is_aux_rel(t.deprel) and _verbal(s, t.id) and _verbal(s, tid)
    ]


def _is_aux_dependent(s: Sentence, tid: int) -> bool:
    tok = s[tid]
    return tok.head > 0 and _is_aux_rel(tok.deprel) and _verbal(s, tid) and _verbal(s, tok.head)


def collect_avcs_ms(s: Sentence, sentence_ref: int = 0) -> list[AvcRecord]:
    """Follow each aux chain up to its top auxiliary and down to the main verb."""
    seen: set[int] = set()
    records = []
    for tok in s.tokens:
        if not _is_aux_dependent(s, tok.id) or tok.id in seen:
            continue
        top = tok.id
        visited = {top}
        while _is_aux_dependent(s, top):
            top = s[top].head
            if top in visited:
                raise TreeValidationError(f"cyclic aux chain through token {top}")
            visited.add(top)
        if top in seen:
            continue
        chain = [top]
        node = top
        while True:
            kids = _aux_children(s, node)
            if not kids:
                break
            node = kids[0]
            if node in chain:
                raise TreeValidationError(f"cyclic aux chain through token {node}")
            chain.append(node)
        seen.update(chain)
        records.append(AvcRecord(sentence_ref, chain[-1], chain[:-1], top))
    records.sort(key=lambda r: r.head_of_subtree)
    return records


def chain_order(mv: int, aux_ids: Sequence[int]) -> list[int]:
    """Auxiliaries from outermost (farthest from the main verb) inwards."""
    return sorted(aux_ids, key=lambda a: (-abs(a - mv), a))


def transform_ud_to_ms(s: Sentence, policy: ReattachPolicy = "right-neighbour") -> Sentence:
    """Re-head every AVC on its outermost auxiliary, chaining down to the main verb."""
    validate_tree(s)
    out = s.copy()
    chains = {}
    for rec in collect_avcs_ud(s):
        if _is_aux_dependent(s, rec.main_verb_id):
            # an auxiliary with auxiliaries of its own: annotation noise, left as is
            logger.debug("skipping nested aux chain at token %d", rec.main_verb_id)
            continue
        chains[rec.main_verb_id] = chain_order(rec.main_verb_id, rec.aux_ids) + [rec.main_verb_id]
    in_chain = {m for chain in chains.values() for m in chain}

    def attachment(x: int) -> int:
        # where the subtree originally rooted at x hangs in the MS tree
        h = s[x].head
        if h in chains and x < h:
            members = chains[h]
            if policy == "maux":
                return members[0]
            return min(m for m in members if m > x)
        return h

    for mv, chain in chains.items():
        maux = chain[0]
        out[maux].head = attachment(mv)
        out[maux].deprel = s[mv].deprel
        for upper, lower in zip(chain, chain[1:]):
            out[lower].head = upper
            out[lower].deprel = "aux"
    for tok in s.tokens:
        if tok.id in in_chain or tok.head not in chains:
            continue
        out[tok.id].head = attachment(tok.id)
    problems = tree_problems(out.heads)
    if problems:
        raise TreeValidationError("transform produced an invalid tree: " + "; ".join(problems))
    return out


def looks_like_ms(treebank: Iterable[Sentence]) -> bool:
    """Chain-direction check: do aux arcs mostly point from auxiliaries down to verbs?

    In UD the dependent of an aux relation is a leaf function word; in MS it
    is the next element of the chain and usually has dependents of its own.
    """
    down = up = 0
    for s in treebank:
        has_children = {t.head for t in s.tokens}
        for t in s.tokens:
            if not _is_aux_dependent(s, t.id):
                continue
            head = s[t.head]
            if t.id in has_children or (head.upos == "AUX" and t.upos == "VERB"):
                down += 1
            else:
                up += 1
    return down > up


def transitivity_label(s: Sentence, mv: int, extra_heads: Iterable[int] = ()) -> str:
    """``transitive`` iff the verb (or one of ``extra_heads``) has an object child."""
    heads = {mv, *extra_heads}
    for t in s.tokens:
        if t.head in heads and deprel_base(t.deprel) in OBJECT_RELS:
            return TRANSITIVE
    return INTRANSITIVE


def agreement_label(s: Sentence, verb: int) -> Optional[str]:
    feats = s[verb].feats
    if "Person" in feats and "Number" in feats:
        return f"{feats['Person']}|{feats['Number']}"
    return None


def avc_agreement_label(s: Sentence, rec: AvcRecord, representation: str) -> Optional[str]:
    """Agreement of the first auxiliary in the chain carrying Person and Number."""
    if representation == "ms":
        order = list(rec.aux_ids)  # already top-down
    else:
        order = sorted(rec.aux_ids)
    for aux in order:
        label = agreement_label(s, aux)
        if label is not None:
            return label
    return None


def nearest_punct(s: Sentence, fmv: int) -> Optional[int]:
    """Closest ``punct`` child, right side first, then left side."""
    kids = [t.id for t in s.tokens if t.head == fmv and deprel_base(t.deprel) == "punct"]
    right = [k for k in kids if k > fmv]
    if right:
        return min(right)
    left = [k for k in kids if k < fmv]
    return max(left) if left else None


def _instances_for_sentence(
    s: Sentence,
    ref: int,
    target_kind: str,
    representation: str,
    lemma_filter: Optional[set[str]],
    exclude_heads_of_aux: bool,
) -> list[ProbeInstance]:
    out = []
    if target_kind in ("FMV", "PUNCT"):
        for v in collect_fmvs(s, lemma_filter, exclude_heads_of_aux):
            trans = transitivity_label(s, v)
            agr = agreement_label(s, v)
            if target_kind == "FMV":
                out.append(ProbeInstance(ref, v, "FMV", trans, agr))
            else:
                p = nearest_punct(s, v)
                if p is not None:
                    out.append(ProbeInstance(ref, p, "PUNCT", trans, agr))
        return out
    if representation == "ud":
        records = collect_avcs_ud(s, ref, lemma_filter)
    else:
        records = collect_avcs_ms(s, ref)
        if lemma_filter is not None:
            records = [r for r in records if all(s[a].lemma in lemma_filter for a in r.aux_ids)]
    for rec in records:
        # objects may sit on any chain element after the MS transform
        extra = rec.aux_ids if representation == "ms" else ()
        trans = transitivity_label(s, rec.main_verb_id, extra)
        agr = avc_agreement_label(s, rec, representation)
        if target_kind == "NFMV":
            target = rec.main_verb_id
        else:
            target = chain_order(rec.main_verb_id, rec.aux_ids)[0] if representation == "ud" else rec.head_of_subtree
        out.append(ProbeInstance(ref, target, target_kind, trans, agr))
    return out


def collect_instances(
    treebank: Sequence[Sentence],
    target_kind: str,
    representation: str = "ud",
    lemma_filter: Optional[Iterable[str]] = None,
    exclude_heads_of_aux: bool = True,
) -> list[ProbeInstance]:
    """All probe targets of one kind, ordered by (sentence, token)."""
    if target_kind not in TARGET_KINDS:
        raise UsageError(f"unknown target kind {target_kind!r}")
    if representation not in REPRESENTATIONS:
        raise UsageError(f"unknown representation {representation!r}")
    lf = set(lemma_filter) if lemma_filter is not None else None
    out = []
    for ref, s in enumerate(treebank):
        out.extend(_instances_for_sentence(s, ref, target_kind, representation, lf, exclude_heads_of_aux))
    return out


def build_task_dataset(
    tb_train: Sequence[Sentence],
    tb_dev: Sequence[Sentence],
    task: str,
    target_kind: str,
    representation: str = "ud",
    lemma_filter: Optional[Iterable[str]] = None,
    exclude_heads_of_aux: bool = True,
) -> TaskDataset:
    """Probe instances for one task; agreement drops instances without a label."""
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; expected one of {TASKS}")
    if target_kind not in _VALID_TARGETS.get(representation, ()):
        raise UsageError(f"target {target_kind!r} is not defined for representation {representation!r}")
    ds = TaskDataset(task, target_kind, representation)
    for split, tb in (("train", tb_train), ("dev", tb_dev)):
        insts = collect_instances(tb, target_kind, representation, lemma_filter, exclude_heads_of_aux)
        if task == "agreement":
            insts = [i for i in insts if i.agreement_label is not None]
        setattr(ds, split, insts)
    logger.info(
        "%s/%s/%s: %d train, %d dev", task, target_kind, representation, len(ds.train), len(ds.dev)
    )
    return ds


def label_distribution(instances: Iterable[ProbeInstance], task: str) -> Counter:
    return Counter(i.label(task) for i in instances)


DATASET_COLUMNS = ("split", "sentence_index", "target_token_id", "target_kind", "task", "label")


def write_dataset(ds: TaskDataset, path: str | Path) -> None:
    """Tab-separated probe dataset, one instance per line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for split in ("train", "dev"):
            for inst in getattr(ds, split):
                w.writerow([split, inst.sentence_ref, inst.target_id, inst.target_kind, ds.task, inst.label(ds.task)])


def read_dataset(path: str | Path, representation: str = "ud") -> TaskDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if not rows:
        raise UsageError(f"{path}: empty dataset file")
    task, kind = rows[0]["task"], rows[0]["target_kind"]
    ds = TaskDataset(task, kind, representation)
    for r in rows:
        label = r["label"]
        inst = ProbeInstance(
            int(r["sentence_index"]),
            int(r["target_token_id"]),
            r["target_kind"],
            label if task == "transitivity" else "",
            label if task == "agreement" else None,
        )
        getattr(ds, r["split"]).append(inst)
    return ds
