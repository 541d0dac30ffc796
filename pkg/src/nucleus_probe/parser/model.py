"""BiLSTM feature extractor, transition scorer and AVC composition."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .. import numeric_core as nc
from ..conllu_io import Sentence, deprel_base
from .transitions import LEFT, RIGHT, ROOT, SHIFT, SWAP

UNK = "<unk>"
VERBAL = frozenset({"VERB", "AUX"})


@dataclass
class ParserConfig:
    word_dim: int = 100
    char_dim: int = 24
    char_out: int = 50  # both directions together
    lstm_layers: int = 2
    lstm_hidden: int = 125  # per direction
    mlp_hidden: int = 100
    rel_dim: int = 20
    recursive: bool = False
    word_dropout: float = 0.25
    exploration: float = 0.1
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    margin: float = 1.0
    forget_bias: float = 1.0
    seed: int = 1
    punct_in_las: bool = True

    @property
    def token_dim(self) -> int:
        return 2 * self.lstm_hidden

    @property
    def feature_dim(self) -> int:
        # per stack/buffer slot
        return 2 * self.token_dim if self.recursive else self.token_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ParserConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Vocab:
    words: list[str]
    word_freq: list[int]
    chars: list[str]
    labels: list[str]
    _w: dict = field(default_factory=dict, repr=False)
    _c: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._w = {w: i for i, w in enumerate(self.words)}
        self._c = {c: i for i, c in enumerate(self.chars)}

    @classmethod
    def build(cls, treebank: Sequence[Sentence]) -> "Vocab":
        wc = Counter(t.form for s in treebank for t in s.tokens)
        cc = Counter(ch for s in treebank for t in s.tokens for ch in t.form)
        labels = sorted({t.deprel for s in treebank for t in s.tokens} | {"root"})
        words = [UNK] + sorted(wc)
        return cls(words, [0] + [wc[w] for w in words[1:]], [UNK] + sorted(cc), labels)

    def word_id(self, w: str) -> int:
        return self._w.get(w, 0)

    def char_ids(self, w: str) -> list[int]:
        return [self._c.get(ch, 0) for ch in w] or [0]


class Actions:
    """Output units of the scorer: SHIFT, SWAP, then LEFT/RIGHT per label."""

    def __init__(self, labels: Sequence[str]):
        self.labels = list(labels)
        self.items: list[tuple[str, Optional[str]]] = [(SHIFT, None), (SWAP, None)]
        for lab in self.labels:
            self.items.append((LEFT, lab))
        for lab in self.labels:
            self.items.append((RIGHT, lab))
        self.index = {it: i for i, it in enumerate(self.items)}
        L = len(self.labels)
        self.left_ids = np.arange(2, 2 + L)
        self.right_ids = np.arange(2 + L, 2 + 2 * L)
        self.root_label = self.labels.index("root") if "root" in self.labels else None

    def __len__(self) -> int:
        return len(self.items)

    def legal_mask(self, legal: set[str], b0_is_root: bool) -> np.ndarray:
        m = np.zeros(len(self.items), dtype=bool)
        if SHIFT in legal:
            m[0] = True
        if SWAP in legal:
            m[1] = True
        if LEFT in legal:
            if b0_is_root and self.root_label is not None:
                m[2 + self.root_label] = True
            else:
                m[self.left_ids] = True
                if self.root_label is not None:
                    m[2 + self.root_label] = b0_is_root
        if RIGHT in legal:
            m[self.right_ids] = True
            if self.root_label is not None:
                m[2 + len(self.labels) + self.root_label] = False
        return m


def is_composition_arc(sentence: Sentence, head: int, dep: int, label: Optional[str]) -> bool:
    """Auxiliary arcs between two verbal tokens trigger subtree composition."""
    if head == ROOT or label is None or deprel_base(label) != "aux":
        return False
    return sentence[head].upos in VERBAL and sentence[dep].upos in VERBAL


class ParserModel:
    """All parameters plus vocabularies.

    Token representations: x_i = [word embedding; char BiLSTM], token vector
    v_i = sentence BiLSTM(x)_i. In recursive mode each slot reads
    [v_i; c_i] where c_i is a composed subtree vector initialised to v_i.
    """

    def __init__(self, vocab: Vocab, config: ParserConfig, init: bool = True):
        self.vocab = vocab
        self.config = config
        self.actions = Actions(vocab.labels)
        gen = torch.Generator()
        gen.manual_seed(config.seed)
        self.store = nc.ParamStore(gen)
        if init:
            self._init_params()

    def _init_params(self) -> None:
        cfg, st = self.config, self.store
        st.add("word_emb", (len(self.vocab.words), cfg.word_dim), fan=(1, cfg.word_dim))
        st.add("char_emb", (len(self.vocab.chars), cfg.char_dim), fan=(1, cfg.char_dim))
        ch = cfg.char_out // 2
        nc.LstmParams.create(st, "char_fwd", cfg.char_dim, ch, cfg.forget_bias)
        nc.LstmParams.create(st, "char_bwd", cfg.char_dim, ch, cfg.forget_bias)
        in_dim = cfg.word_dim + cfg.char_out
        for layer in range(cfg.lstm_layers):
            nc.LstmParams.create(st, f"sent_fwd{layer}", in_dim, cfg.lstm_hidden, cfg.forget_bias)
            nc.LstmParams.create(st, f"sent_bwd{layer}", in_dim, cfg.lstm_hidden, cfg.forget_bias)
            in_dim = 2 * cfg.lstm_hidden
        D = cfg.token_dim
        st.add("root_vec", (D,), fan=(1, D))
        st.add("pad_vec", (D,), fan=(1, D))
        if cfg.recursive:
            comp_in = 2 * cfg.feature_dim + cfg.rel_dim
            st.add("comp_W", (D, comp_in))
            st.add("comp_b", (D,), const=0.0)
            st.add("rel_emb", (2, cfg.rel_dim), fan=(1, cfg.rel_dim))
        F = cfg.feature_dim
        st.add("mlp_W1", (cfg.mlp_hidden, 3 * F))
        st.add("mlp_b1", (cfg.mlp_hidden,), const=0.0)
        st.add("mlp_W2", (len(self.actions), cfg.mlp_hidden))
        st.add("mlp_b2", (len(self.actions),), const=0.0)

    # -- lexical layers ------------------------------------------------------

    def _lstm(self, name: str) -> nc.LstmParams:
        return nc.LstmParams.from_store(self.store, name)

    def type_vectors(self, forms: Sequence[str], word_ids: Optional[Sequence[int]] = None) -> torch.Tensor:
        ids = [self.vocab.word_id(f) for f in forms] if word_ids is None else list(word_ids)
        return self.store["word_emb"][torch.as_tensor(ids, dtype=torch.long)]

    def char_vectors(self, forms: Sequence[str]) -> torch.Tensor:
        """Char BiLSTM final states, one row per distinct form in ``forms`` order."""
        seqs = [self.vocab.char_ids(f) for f in forms]
        T = max(len(s) for s in seqs)
        idx = torch.zeros((T, len(seqs)), dtype=torch.long)
        for b, s in enumerate(seqs):
            idx[: len(s), b] = torch.as_tensor(s)
        xs = self.store["char_emb"][idx]
        return nc.bilstm_final(self._lstm("char_fwd"), self._lstm("char_bwd"), xs, [len(s) for s in seqs])

    def lexical(self, forms: Sequence[str], word_ids: Optional[Sequence[int]] = None) -> torch.Tensor:
        uniq = sorted(set(forms))
        pos = {f: i for i, f in enumerate(uniq)}
        chars = self.char_vectors(uniq)[[pos[f] for f in forms]]
        return torch.cat([self.type_vectors(forms, word_ids), chars], dim=-1)

    def encode(self, sentence: Sentence, word_ids: Optional[Sequence[int]] = None) -> torch.Tensor:
        """Token vectors, row 0 being the artificial root: shape (n + 1, token_dim)."""
        cfg = self.config
        forms = [t.form for t in sentence.tokens]
        x = self.lexical(forms, word_ids)
        fwd = [self._lstm(f"sent_fwd{k}") for k in range(cfg.lstm_layers)]
        bwd = [self._lstm(f"sent_bwd{k}") for k in range(cfg.lstm_layers)]
        v = nc.bilstm_encode(fwd, bwd, x)
        return torch.cat([self.store["root_vec"].unsqueeze(0), v], dim=0)

    def dropout_ids(self, sentence: Sentence, rng: np.random.Generator) -> list[int]:
        """Word ids with frequency-scaled replacement by the unknown word."""
        alpha = self.config.word_dropout
        out = []
        for t in sentence.tokens:
            wid = self.vocab.word_id(t.form)
            freq = self.vocab.word_freq[wid]
            if wid and alpha > 0 and rng.random() < alpha / (alpha + freq):
                wid = 0
            out.append(wid)
        return out

    # -- scorer --------------------------------------------------------------

    def scorer_blocks(self):
        """W1 split per slot (s1, s0, b0) and, in recursive mode, per half."""
        F = self.config.feature_dim
        D = self.config.token_dim
        W1 = self.store["mlp_W1"]
        blocks = []
        for k in range(3):
            blk = W1[:, k * F:(k + 1) * F]
            if self.config.recursive:
                blocks.append((blk[:, :D], blk[:, D:]))
            else:
                blocks.append((blk, None))
        return blocks

    def compose(self, v_head: torch.Tensor, v_dep: torch.Tensor, direction: int) -> torch.Tensor:
        """c_head = tanh(W [v_head; v_dep; r] + b); direction 0 = left-aux, 1 = right-aux."""
        r = self.store["rel_emb"][direction]
        z = nc.affine(self.store["comp_W"], torch.cat([v_head, v_dep, r]), self.store["comp_b"])
        return torch.tanh(z)

    def parameters(self) -> list[torch.Tensor]:
        return self.store.tensors()


class NumpyScorer:
    """Detached copy of the scorer for fast greedy decisions."""

    def __init__(self, model: ParserModel):
        cfg = model.config
        self.recursive = cfg.recursive
        self.blocks = [
            (a.detach().numpy(), None if b is None else b.detach().numpy()) for a, b in model.scorer_blocks()
        ]
        self.b1 = model.store["mlp_b1"].detach().numpy()
        self.W2 = model.store["mlp_W2"].detach().numpy()
        self.b2 = model.store["mlp_b2"].detach().numpy()
        if self.recursive:
            self.comp_W = model.store["comp_W"].detach().numpy()
            self.comp_b = model.store["comp_b"].detach().numpy()
            self.rel = model.store["rel_emb"].detach().numpy()

    def prepare(self, base: np.ndarray):
        """Per-slot projections of the base rows (tokens, root, pad)."""
        return [base @ a.T for a, _ in self.blocks]

    def project_c(self, c: np.ndarray):
        return [c @ b.T for _, b in self.blocks]

    def scores(self, base_proj, c_proj, rows, versions) -> np.ndarray:
        pre = self.b1.copy()
        for k in range(3):
            pre += base_proj[k][rows[k]]
            if self.recursive:
                pre += c_proj[versions[k]][k]
        return self.W2 @ np.tanh(pre) + self.b2

    def compose(self, v_head: np.ndarray, v_dep: np.ndarray, direction: int) -> np.ndarray:
        z = self.comp_W @ np.concatenate([v_head, v_dep, self.rel[direction]]) + self.comp_b
        return np.tanh(z)
