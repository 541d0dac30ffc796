import numpy as np
import pytest
import torch
from hypothesis import settings

from nucleus_probe.conllu_io import Sentence, Token, parse_feats

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_sentence(rows, comments=()):
    """rows: (form, lemma, upos, feats, head, deprel)."""
    toks = [
        Token(i, form, lemma, upos, "_", parse_feats(feats), head, deprel)
        for i, (form, lemma, upos, feats, head, deprel) in enumerate(rows, start=1)
    ]
    return Sentence(toks, list(comments))


@pytest.fixture
def did_this():
    return make_sentence([
        ("I", "I", "PRON", "Number=Sing|Person=1", 2, "nsubj"),
        ("did", "do", "VERB", "Mood=Ind|Number=Sing|Person=1|Tense=Past|VerbForm=Fin", 0, "root"),
        ("this", "this", "PRON", "_", 2, "obj"),
    ])


@pytest.fixture
def could_have_done():
    return make_sentence([
        ("I", "I", "PRON", "Number=Sing|Person=1", 5, "nsubj"),
        ("could", "can", "AUX", "Mood=Ind|Number=Sing|Person=1|VerbForm=Fin", 5, "aux"),
        ("easily", "easily", "ADV", "_", 5, "advmod"),
        ("have", "have", "AUX", "VerbForm=Inf", 5, "aux"),
        ("done", "do", "VERB", "VerbForm=Part", 0, "root"),
        ("this", "this", "PRON", "_", 5, "dobj"),
    ])


@pytest.fixture(autouse=True)
def _seed():
    np.random.seed(0)
    torch.manual_seed(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
