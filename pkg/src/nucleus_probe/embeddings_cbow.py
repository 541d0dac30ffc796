"""CBOW word embeddings with negative sampling, trained from scratch."""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .numeric_core import UsageError


@dataclass
class TypeEmbeddingTable:
    words: list[str]
    matrix: np.ndarray  # (|V|, dim)
    epoch_loss: list[float] = field(default_factory=list)
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __contains__(self, w: str) -> bool:
        return w in self._index

    def __len__(self) -> int:
        return len(self.words)

    def vector(self, w: str) -> Optional[np.ndarray]:
        i = self._index.get(w)
        return None if i is None else self.matrix[i]

    def lookup(self, w: str) -> np.ndarray:
        """Vector of ``w``; zeros for words outside the vocabulary."""
        v = self.vector(w)
        return np.zeros(self.dim) if v is None else v

    def cosine(self, a: str, b: str) -> float:
        u, v = self.vector(a), self.vector(b)
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))


def train_cbow(
    sentences: Iterable[Sequence[str]],
    dim: int = 100,
    window: int = 5,
    min_count: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    sample: float = 1e-3,
    seed: int = 1,
    workers: int = 1,
) -> TypeEmbeddingTable:
    """Train CBOW vectors; ``workers > 1`` enables lock-free (non-deterministic) threads."""
    corpus = [list(s) for s in sentences]
    counts = Counter(w for s in corpus for w in s)
    words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    if not words:
        raise UsageError("corpus has no word reaching the frequency threshold")
    index = {w: i for i, w in enumerate(words)}
    freq = np.array([counts[w] for w in words], dtype=np.float64)
    ids = [np.array([index[w] for w in s if w in index], dtype=np.int64) for s in corpus]
    ids = [s for s in ids if s.size]
    total = float(freq.sum())

    rng = np.random.default_rng(seed)
    V = len(words)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)
    if sample > 0:
        f = freq / total
        keep_p = np.minimum(1.0, (np.sqrt(f / sample) + 1) * sample / f)
    else:
        keep_p = np.ones(V)

    budget = epochs * sum(s.size for s in ids) + 1
    done = [0]
    losses: list[float] = []

    def run(chunk, gen):
        loss = 0.0
        for sent in chunk:
            sent = sent[gen.random(sent.size) < keep_p[sent]]
            n = sent.size
            if n < 2:
                done[0] += n
                continue
            spans = gen.integers(1, window + 1, size=n)
            negs = np.searchsorted(noise_cdf, gen.random((n, negatives)))
            for pos in range(n):
                alpha = max(lr * (1 - done[0] / budget), lr * 1e-4)
                done[0] += 1
                b = spans[pos]
                ctx = np.concatenate([sent[max(0, pos - b):pos], sent[pos + 1:pos + 1 + b]])
                if ctx.size == 0:
                    continue
                h = w_in[ctx].mean(axis=0)
                tgt = np.concatenate([[sent[pos]], negs[pos]])
                lab = np.zeros(tgt.size)
                lab[0] = 1.0
                p = _sigmoid(w_out[tgt] @ h)
                loss -= np.log(np.where(lab > 0, p, 1 - p) + 1e-12).sum()
                g = (lab - p) * alpha
                neu = g @ w_out[tgt]
                np.add.at(w_out, tgt, np.outer(g, h))
                np.add.at(w_in, ctx, neu)
        return loss

    for _ in range(epochs):
        order = rng.permutation(len(ids))
        if workers <= 1:
            losses.append(float(run([ids[i] for i in order], rng)))
            continue
        parts = np.array_split(order, workers)
        out = [0.0] * workers
        seeds = rng.integers(0, 2**63 - 1, size=workers)

        def job(k):
            out[k] = run([ids[i] for i in parts[k]], np.random.default_rng(int(seeds[k])))

        threads = [threading.Thread(target=job, args=(k,)) for k in range(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        losses.append(float(sum(out)))
    return TypeEmbeddingTable(words, w_in, losses)


def write_embeddings(table: TypeEmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table.words)} {table.dim}\n")
        for w, row in zip(table.words, table.matrix):
            fh.write(w + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path) -> TypeEmbeddingTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty embedding file")
    try:
        n, dim = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}:1: expected '<count> <dim>' header") from exc
    if len(lines) - 1 != n:
        raise ValueError(f"{path}: header declares {n} words, found {len(lines) - 1}")
    words, rows = [], []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.rstrip(" ").split(" ")
        if len(parts) != dim + 1:
            raise ValueError(f"{path}:{k}: expected {dim} values")
        words.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return TypeEmbeddingTable(words, np.array(rows, dtype=np.float64).reshape(n, dim))
