"""Generator for a small UD-style toy language.

Produces annotated sentences with finite main verbs, auxiliary chains
(including passives), objects, subject agreement morphology, punctuation,
complement clauses and occasional non-projective extraposition. Used for
tests and offline pipeline runs when no real treebank is at hand.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .conllu_io import Sentence, Token

PERSONS = [("1", "Sing"), ("2", "Sing"), ("3", "Sing"), ("1", "Plur"), ("2", "Plur"), ("3", "Plur")]
AGR_SUFFIX = {
    ("1", "Sing"): "o", ("2", "Sing"): "as", ("3", "Sing"): "at",
    ("1", "Plur"): "amo", ("2", "Plur"): "ate", ("3", "Plur"): "ant",
}
PRONOUNS = {
    ("1", "Sing"): "ego", ("2", "Sing"): "tu", ("3", "Sing"): "ille",
    ("1", "Plur"): "nos", ("2", "Plur"): "vos", ("3", "Plur"): "illi",
}
# auxiliaries: lemma -> (finite stem, non-finite form, VerbForm required of the next verb)
AUXES = {
    "hab": ("hab", "habere", "Part"),
    "pot": ("pot", "posse", "Inf"),
    "vol": ("vol", "velle", "Inf"),
}
PASSIVE_AUX = ("ess", "esse")


def _syllables(rng: random.Random, k: int) -> str:
    cons = "bdfgklmnprstvz"
    vows = "aeiou"
    return "".join(rng.choice(cons) + rng.choice(vows) for _ in range(k))


@dataclass
class _Lexicon:
    transitive: list[str]
    intransitive: list[str]
    nouns: list[str]
    adverbs: list[str]
    adjectives: list[str]


def make_lexicon(seed: int = 0, size: int = 40) -> _Lexicon:
    rng = random.Random(seed)
    words: set[str] = set()

    def fresh(k: int) -> str:
        while True:
            w = _syllables(rng, k)
            if w not in words:
                words.add(w)
                return w

    return _Lexicon(
        transitive=[fresh(2) for _ in range(size)],
        intransitive=[fresh(2) for _ in range(size)],
        nouns=[fresh(rng.choice((2, 3))) for _ in range(size * 2)],
        adverbs=[fresh(2) + "ter" for _ in range(size // 4)],
        adjectives=[fresh(2) + "os" for _ in range(size // 4)],
    )


class _Builder:
    def __init__(self):
        self.tokens: list[Token] = []

    def add(self, form, lemma, upos, feats=None, deprel="_") -> int:
        tid = len(self.tokens) + 1
        self.tokens.append(Token(tid, form, lemma, upos, "_", dict(feats or {}), -1, deprel))
        return tid

    def attach(self, dep: int, head: int, deprel: str) -> None:
        tok = self.tokens[dep - 1]
        tok.head = head
        tok.deprel = deprel


class ToyGrammar:
    """Random sentence generator over a fixed lexicon."""

    def __init__(self, seed: int = 0, lexicon_seed: int = 0, p_avc: float = 0.45, p_nonproj: float = 0.4):
        self.rng = random.Random(seed)
        self.lex = make_lexicon(lexicon_seed)
        self.p_avc = p_avc
        self.p_nonproj = p_nonproj

    # -- phrase builders; each returns a list of (token_id) in linear order plus the head --

    def _noun_phrase(self, b: _Builder, agr):
        rng = self.rng
        person, number = agr
        if person != "3" or rng.random() < 0.3:
            w = PRONOUNS[agr]
            head = b.add(w, w, "PRON", {"Person": person, "Number": number, "PronType": "Prs"})
            return [head], head
        lemma = rng.choice(self.lex.nouns)
        form = lemma + ("a" if number == "Sing" else "i")
        ids = []
        if rng.random() < 0.3:
            adj = rng.choice(self.lex.adjectives)
            ids.append(b.add(adj, adj, "ADJ", {"Number": number}))
        head = b.add(form, lemma, "NOUN", {"Number": number})
        for a in ids:
            b.attach(a, head, "amod")
        return ids + [head], head

    def _object(self, b: _Builder):
        agr = ("3", self.rng.choice(("Sing", "Plur")))
        return self._noun_phrase(b, agr)

    def _clause(self, b: _Builder, depth: int = 0):
        """Returns (ordered ids, head id)."""
        rng = self.rng
        agr = rng.choice(PERSONS)
        transitive = rng.random() < 0.5
        lemma = rng.choice(self.lex.transitive if transitive else self.lex.intransitive)
        use_avc = rng.random() < self.p_avc
        passive = use_avc and transitive and rng.random() < 0.2
        drop_subject = agr[0] != "3" and rng.random() < 0.3

        order: list[int] = []
        subj_ids, subj = ([], None)
        if not drop_subject:
            subj_ids, subj = self._noun_phrase(b, agr)
            order += subj_ids

        adverb = None
        aux_ids: list[int] = []
        if use_avc:
            n_aux = 1 if rng.random() < 0.75 else 2
            aux_lemmas = rng.sample(sorted(AUXES), n_aux)
            # first auxiliary is finite and agrees
            first = aux_lemmas[0]
            stem = AUXES[first][0]
            aux_ids.append(
                b.add(stem + AGR_SUFFIX[agr], first, "AUX",
                      {"Mood": "Ind", "Number": agr[1], "Person": agr[0], "Tense": "Pres", "VerbForm": "Fin"})
            )
            nf_form = AUXES[first][2]
            if rng.random() < 0.3:
                adv = rng.choice(self.lex.adverbs)
                adverb = b.add(adv, adv, "ADV")
            for lem in aux_lemmas[1:]:
                aux_ids.append(b.add(AUXES[lem][1], lem, "AUX", {"VerbForm": "Inf"}))
                nf_form = AUXES[lem][2]
            if passive:
                aux_ids.append(b.add(PASSIVE_AUX[1], PASSIVE_AUX[0], "AUX", {"VerbForm": "Inf"}))
                nf_form = "Part"
            suffix = "ito" if nf_form == "Part" else "are"
            verb = b.add(lemma + suffix, lemma, "VERB", {"VerbForm": nf_form})
        else:
            if rng.random() < 0.15:
                adv = rng.choice(self.lex.adverbs)
                adverb = b.add(adv, adv, "ADV")
            verb = b.add(lemma + AGR_SUFFIX[agr], lemma, "VERB",
                         {"Mood": "Ind", "Number": agr[1], "Person": agr[0], "Tense": "Pres", "VerbForm": "Fin"})
        seq = aux_ids[:1] + ([adverb] if adverb and use_avc else []) + aux_ids[1:]
        if adverb and not use_avc:
            seq = [adverb]
        order += seq + [verb]
        for i, a in enumerate(aux_ids):
            rel = "aux:pass" if passive and i == len(aux_ids) - 1 else "aux"
            b.attach(a, verb, rel)
        if adverb:
            b.attach(adverb, verb, "advmod")
        if subj is not None:
            b.attach(subj, verb, "nsubj:pass" if passive else "nsubj")

        if transitive and not passive:
            obj_ids, obj = self._object(b)
            b.attach(obj, verb, "obj")
            order += obj_ids
        if rng.random() < 0.25:
            adv = rng.choice(self.lex.adverbs)
            a = b.add(adv, adv, "ADV")
            b.attach(a, verb, "advmod")
            order.append(a)
        if depth == 0 and rng.random() < 0.2:
            comma = b.add(",", ",", "PUNCT")
            mark = b.add("quod", "quod", "SCONJ")
            sub_order, sub_head = self._clause(b, depth + 1)
            b.attach(comma, sub_head, "punct")
            b.attach(mark, sub_head, "mark")
            b.attach(sub_head, verb, "ccomp")
            order += [comma, mark] + sub_order
        return order, verb

    def sentence(self) -> Sentence:
        rng = self.rng
        b = _Builder()
        order, root = self._clause(b)
        b.attach(root, 0, "root")
        if rng.random() < 0.15:
            # sentence-initial discourse particle attached to the root
            part = b.add("ecce", "ecce", "INTJ")
            b.attach(part, root, "discourse")
            order = [part] + order
        end = b.add(rng.choice((".", ".", ".", "!", "?")), ".", "PUNCT")
        b.attach(end, root, "punct")
        order.append(end)
        embedded = [t.id for t in b.tokens if t.upos == "VERB" and t.id != root]
        if embedded and rng.random() < self.p_nonproj:
            # adverb of the embedded verb extraposed past the final punctuation: crossing arc
            extra = rng.choice(self.lex.adverbs)
            a = b.add(extra, extra, "ADV")
            b.attach(a, embedded[0], "advmod")
            order.append(a)
        # renumber by linear order
        new_id = {old: i for i, old in enumerate(order, start=1)}
        toks = []
        for old in order:
            t = b.tokens[old - 1]
            toks.append(Token(new_id[old], t.form, t.lemma, t.upos, "_", t.feats,
                              new_id.get(t.head, 0) if t.head else 0, t.deprel))
        return Sentence(toks, [])


def generate_treebank(n: int, seed: int = 0, lexicon_seed: int = 0, **kw) -> list[Sentence]:
    g = ToyGrammar(seed=seed, lexicon_seed=lexicon_seed, **kw)
    out = []
    for i in range(n):
        s = g.sentence()
        s.comments = [f"# sent_id = toy-{seed}-{i + 1}", f"# text = {s.text}"]
        out.append(s)
    return out
