"""Reading, validating and writing CoNLL-U treebanks."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

__all__ = [
    "ConlluFormatError",
    "TreeValidationError",
    "Token",
    "Sentence",
    "parse_feats",
    "format_feats",
    "parse_conllu",
    "serialize_conllu",
    "read_conllu",
    "write_conllu",
    "tree_problems",
    "validate_tree",
    "deprel_base",
]


class ConlluFormatError(ValueError):
    """Malformed CoNLL-U input. ``lineno`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno else ""
        super().__init__(prefix + message)


class TreeValidationError(ValueError):
    """A sentence does not form a single rooted, acyclic tree."""


def deprel_base(deprel: str) -> str:
    """Universal part of a relation label (``aux:pass`` -> ``aux``)."""
    return deprel.split(":", 1)[0]


def parse_feats(s: str) -> dict[str, str]:
    """Parse a ``Name=Val|Name=Val`` FEATS string; ``_`` gives an empty map."""
    if s == "_" or s == "":
        return {}
    feats: dict[str, str] = {}
    for unit in s.split("|"):
        name, eq, value = unit.partition("=")
        if not eq or not name or not value:
            raise ConlluFormatError(f"malformed feature {unit!r} in {s!r}")
        if name in feats:
            raise ConlluFormatError(f"duplicate feature {name!r} in {s!r}")
        feats[name] = value
    return feats


def format_feats(feats: dict[str, str]) -> str:
    # canonical UD order: case-insensitive by name
    if not feats:
        return "_"
    return "|".join(f"{k}={feats[k]}" for k in sorted(feats, key=lambda k: (k.lower(), k)))


@dataclass
class Token:
    id: int
    form: str
    lemma: str = "_"
    upos: str = "_"
    xpos: str = "_"
    feats: dict[str, str] = field(default_factory=dict)
    head: int = 0
    deprel: str = "_"
    deps: str = "_"
    misc: str = "_"

    def to_line(self) -> str:
        return "\t".join(
            [
                str(self.id),
                self.form,
                self.lemma,
                self.upos,
                self.xpos,
                format_feats(self.feats),
                str(self.head),
                self.deprel,
                self.deps,
                self.misc,
            ]
        )

    def copy(self) -> "Token":
        return Token(
            self.id, self.form, self.lemma, self.upos, self.xpos, dict(self.feats),
            self.head, self.deprel, self.deps, self.misc,
        )


@dataclass
class Sentence:
    """Syntactic words of one sentence.

    Multiword-token ranges and empty nodes are kept verbatim in ``passthrough``
    as ``(n_preceding_words, line)`` pairs so that serialization restores them
    at their original position.
    """

    tokens: list[Token] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)
    passthrough: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token_id: int) -> Token:
        # 1-based, like the ID column
        if token_id < 1:
            raise IndexError(token_id)
        return self.tokens[token_id - 1]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    def children(self, token_id: int) -> list[int]:
        return [t.id for t in self.tokens if t.head == token_id]

    def copy(self) -> "Sentence":
        return Sentence(
            [t.copy() for t in self.tokens], list(self.comments), list(self.passthrough)
        )

    @property
    def text(self) -> str:
        return " ".join(t.form for t in self.tokens)


def tree_problems(heads: list[int]) -> list[str]:
    """Reasons why ``heads`` (1-based dependents, 0 = root) is not a tree."""
    n = len(heads)
    problems = []
    for i, h in enumerate(heads, start=1):
        if h < 0 or h > n:
            problems.append(f"token {i}: head {h} out of range [0, {n}]")
        elif h == i:
            problems.append(f"token {i}: self-loop")
    if problems:
        return problems
    roots = [i for i, h in enumerate(heads, start=1) if h == 0]
    if n and len(roots) != 1:
        problems.append(f"{len(roots)} root tokens (expected 1)")
    state = [0] * (n + 1)  # 0 unseen, 1 on path, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            problems.append(f"cycle through token {node}")
        for p in path:
            state[p] = 2
    return problems


def validate_tree(sentence: Sentence) -> None:
    problems = tree_problems(sentence.heads)
    if problems:
        ident = next((c for c in sentence.comments if c.startswith("# sent_id")), sentence.text[:40])
        raise TreeValidationError(f"{ident}: " + "; ".join(problems))


def _parse_int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConlluFormatError(f"non-integer {what} {value!r}", lineno) from None


def _iter_lines(source: str | TextIO) -> Iterator[str]:
    if isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        yield line.rstrip("\r\n")


def parse_conllu(source: str | TextIO, strict: bool = False) -> list[Sentence]:
    """Parse CoNLL-U text (or a text stream) into sentences.

    With ``strict`` every sentence must be a single-rooted acyclic tree.
    """
    sentences: list[Sentence] = []
    current = Sentence()
    started = False
    start_line = 0

    def flush():
        nonlocal current, started
        if started:
            if strict:
                try:
                    validate_tree(current)
                except TreeValidationError as exc:
                    raise TreeValidationError(f"sentence starting at line {start_line}: {exc}") from None
            sentences.append(current)
        current = Sentence()
        started = False

    for lineno, line in enumerate(_iter_lines(source), start=1):
        if not line.strip():
            flush()
            continue
        if not started:
            started = True
            start_line = lineno
        if line.startswith("#"):
            if current.tokens or current.passthrough:
                raise ConlluFormatError("comment line inside token block", lineno)
            current.comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluFormatError(f"expected 10 tab-separated columns, found {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            current.passthrough.append((len(current.tokens), line))
            continue
        tid = _parse_int(cols[0], "ID", lineno)
        if tid != len(current.tokens) + 1:
            raise ConlluFormatError(f"token ID {tid} out of sequence", lineno)
        head = _parse_int(cols[6], "HEAD", lineno)
        try:
            feats = parse_feats(cols[5])
        except ConlluFormatError as exc:
            raise ConlluFormatError(str(exc), lineno) from None
        current.tokens.append(
            Token(tid, cols[1], cols[2], cols[3], cols[4], feats, head, cols[7], cols[8], cols[9])
        )
    flush()
    return sentences


def serialize_conllu(treebank: Iterable[Sentence]) -> str:
    out: list[str] = []
    for sent in treebank:
        out.extend(sent.comments)
        pending = sorted(sent.passthrough, key=lambda p: p[0])
        k = 0
        for n_before in range(len(sent.tokens) + 1):
            while k < len(pending) and pending[k][0] == n_before:
                out.append(pending[k][1])
                k += 1
            if n_before < len(sent.tokens):
                out.append(sent.tokens[n_before].to_line())
        out.append("")
    return "".join(line + "\n" for line in out)


def read_conllu(path: str | Path, strict: bool = False) -> list[Sentence]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_conllu(fh, strict=strict)


def write_conllu(treebank: Iterable[Sentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_conllu(treebank))
