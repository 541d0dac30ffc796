import numpy as np
import pytest
import torch

from conftest import make_sentence
from nucleus_probe import numeric_core as nc
from nucleus_probe.conllu_io import tree_problems
from nucleus_probe.parser.engine import (
    AlignmentError,
    _walk,
    _with_pad,
    evaluate_las,
    parse,
    parse_treebank,
    sentence_loss,
    train_parser,
    write_training_log,
)
from nucleus_probe.parser.model import NumpyScorer, ParserConfig, ParserModel, Vocab, is_composition_arc
from nucleus_probe.parser.persistence import ContainerError, IntegrityError, VersionError, load_model, save_model
from nucleus_probe.parser.transitions import Gold
from nucleus_probe.synthetic import generate_treebank

SMALL = dict(word_dim=16, char_dim=8, char_out=12, lstm_hidden=16, mlp_hidden=24, rel_dim=4)


def small_model(tb, recursive=False, seed=1, **kw):
    return ParserModel(Vocab.build(tb), ParserConfig(recursive=recursive, seed=seed, **{**SMALL, **kw}))


def gold_of(s):
    return Gold.from_heads(s.heads, [t.deprel for t in s.tokens])


# -- encoding ----------------------------------------------------------------


def test_default_dimensions(did_this):
    m = ParserModel(Vocab.build([did_this]), ParserConfig())
    with torch.no_grad():
        enc = m.encode(did_this)
        assert enc.shape == (4, 250)
        assert m.type_vectors(["did"]).shape == (1, 100)
        assert m.char_vectors(["did"]).shape == (1, 50)
    assert ParserConfig(recursive=True).feature_dim == 500


def test_one_token_sentence():
    s = make_sentence([("go", "go", "VERB", "VerbForm=Fin", 0, "root")])
    m = ParserModel(Vocab.build([s]), ParserConfig())
    with torch.no_grad():
        assert m.encode(s).shape == (2, 250)
    res = parse(m, s)
    assert res.heads[1:] == [0]
    assert res.labels[1] == "root"


def test_oov_uses_characters(did_this):
    m = small_model([did_this])
    with torch.no_grad():
        a, b = m.lexical(["hid", "sit"])  # unseen words, known characters
    w = m.config.word_dim
    assert torch.equal(a[:w], b[:w])  # both map to the unknown type
    assert not torch.allclose(a[w:], b[w:])


def test_composition_touches_only_heads(could_have_done):
    m = small_model([could_have_done], recursive=True)
    scorer = NumpyScorer(m)
    with torch.no_grad():
        base = _with_pad(m, m.encode(could_have_done)).numpy()
    # only the AVC head is rewritten; every other c_i stays a copy of v_i
    c, trace, _, composed = _walk(m, scorer, could_have_done, base, gold_of(could_have_done))
    untouched = [i for i in range(1, 7) if i != 5]
    assert np.array_equal(composed[untouched], base[untouched])


def test_figure_sentence_composes_twice(could_have_done):
    m = small_model([could_have_done], recursive=True)
    scorer = NumpyScorer(m)
    with torch.no_grad():
        base = _with_pad(m, m.encode(could_have_done)).numpy()
    _, trace, _, composed = _walk(m, scorer, could_have_done, base, gold_of(could_have_done))
    assert len(trace.compositions) == 2
    assert {(comp.head_row, comp.dep_row) for comp in trace.compositions} == {(5, 2), (5, 4)}
    # the second composition reads the output of the first
    assert sorted(comp.head_version for comp in trace.compositions)[1] > 7
    assert not np.allclose(composed[5], base[5])


def test_composition_arc_rule(could_have_done):
    assert is_composition_arc(could_have_done, 5, 2, "aux")
    assert is_composition_arc(could_have_done, 5, 4, "aux:pass")
    assert not is_composition_arc(could_have_done, 5, 1, "aux")  # pronoun dependent
    assert not is_composition_arc(could_have_done, 5, 3, "advmod")
    assert not is_composition_arc(could_have_done, 0, 5, "root")


def test_zero_composition_gives_zero(could_have_done):
    m = small_model([could_have_done], recursive=True)
    with torch.no_grad():
        m.store["comp_W"].zero_()
        m.store["comp_b"].zero_()
        D = m.config.token_dim
        out = m.compose(torch.ones(2 * D), torch.ones(2 * D), 0)
    assert torch.equal(out, torch.zeros(D))
    # NumpyScorer agrees
    assert np.array_equal(NumpyScorer(m).compose(np.ones(2 * D), np.ones(2 * D), 1), np.zeros(D))


def test_recursive_matches_plain_when_c_blocks_zero():
    tb = generate_treebank(20, seed=7)
    plain = small_model(tb, recursive=False, seed=3)
    rec = small_model(tb, recursive=True, seed=3)
    D = plain.config.token_dim
    with torch.no_grad():
        for name, t in plain.store:
            if name == "mlp_W1":
                W = rec.store["mlp_W1"]
                W.zero_()
                for k in range(3):
                    W[:, 2 * D * k:2 * D * k + D] = t[:, D * k:D * (k + 1)]
            else:
                rec.store[name].copy_(t)
        rec.store["comp_W"].zero_()
        rec.store["comp_b"].zero_()
    for s in tb:
        a, b = parse(plain, s), parse(rec, s)
        assert a.heads == b.heads and a.labels == b.labels
        assert np.array_equal(a.token_vectors, b.token_vectors)


def test_parse_always_yields_tree():
    tb = generate_treebank(40, seed=11)
    for recursive in (False, True):
        m = small_model(tb, recursive=recursive)
        for s in tb:
            res = parse(m, s)
            assert tree_problems(res.heads[1:]) == []
            assert all(lab is not None for lab in res.labels[1:])


def test_tied_scores_cost_one_margin_each(did_this):
    m = small_model([did_this])
    with torch.no_grad():
        m.store["mlp_W2"].zero_()
        m.store["mlp_b2"].zero_()
    loss = sentence_loss(m, did_this, np.random.default_rng(0), train=False, explore=0.0)
    # all scores tie, so every recorded violation costs exactly the margin
    assert float(loss.detach()) > 0
    assert float(loss.detach()) % m.config.margin == 0


# -- evaluation --------------------------------------------------------------


def test_eval_identity(did_this):
    r = evaluate_las([did_this], [did_this.copy()])
    assert (r.las, r.uas, r.tokens) == (100.0, 100.0, 3)


def test_eval_labels_wrong(did_this):
    p = did_this.copy()
    for t in p.tokens:
        t.deprel = "dep"
    r = evaluate_las([did_this], [p])
    assert r.uas == 100.0 and r.las == 0.0


def test_eval_hand_scored():
    g = make_sentence([
        ("a", "a", "DET", "_", 2, "det"),
        ("b", "b", "NOUN", "_", 3, "nsubj"),
        ("c", "c", "VERB", "_", 0, "root"),
        ("d", "d", "NOUN", "_", 3, "obj"),
        (".", ".", "PUNCT", "_", 3, "punct"),
    ])
    p = g.copy()
    p[1].head = 3          # wrong head, right label
    p[2].deprel = "obj"    # right head, wrong label
    p[5].head = 4          # wrong head on punctuation
    # manual count: heads right on 2,3,4 -> 3/5; head+label right on 3,4 -> 2/5
    r = evaluate_las([g], [p])
    assert r.uas == pytest.approx(60.0) and r.las == pytest.approx(40.0)
    r2 = evaluate_las([g], [p], punct=False)
    assert r2.tokens == 4 and r2.las == pytest.approx(50.0)


def test_eval_alignment(did_this, could_have_done):
    with pytest.raises(AlignmentError):
        evaluate_las([did_this], [could_have_done])
    with pytest.raises(AlignmentError):
        evaluate_las([did_this], [])


# -- training ----------------------------------------------------------------


def test_empty_training_set():
    with pytest.raises(nc.UsageError):
        train_parser([], [], ParserConfig(**SMALL))


def test_training_deterministic(tmp_path):
    tb = generate_treebank(12, seed=2)
    cfg = ParserConfig(epochs=2, seed=5, **SMALL)
    _, h1 = train_parser(tb, tb[:4], cfg)
    _, h2 = train_parser(tb, tb[:4], cfg)
    assert [(e.train_loss, e.dev_las) for e in h1] == [(e.train_loss, e.dev_las) for e in h2]
    write_training_log(h1, tmp_path / "log.tsv")
    lines = (tmp_path / "log.tsv").read_text().splitlines()
    assert lines[0] == "epoch\ttrain_loss\tdev_LAS" and len(lines) == 3


@pytest.mark.parametrize("recursive", [False, True])
def test_memorizes_toy_treebank(recursive):
    tb = generate_treebank(50, seed=21, p_nonproj=0.0)
    cfg = ParserConfig(epochs=30, recursive=recursive, seed=1,
                       word_dim=32, char_dim=12, char_out=24, lstm_hidden=48, mlp_hidden=64, rel_dim=8)
    model, hist = train_parser(tb, tb, cfg)
    las = evaluate_las(tb, parse_treebank(model, tb)).las
    assert las >= 95.0
    assert max(e.dev_las for e in hist) == pytest.approx(las)


# -- persistence -------------------------------------------------------------


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    tb = generate_treebank(100, seed=31)
    m = small_model(tb, recursive=True, seed=9)
    path = tmp_path_factory.mktemp("m") / "rc.model"
    save_model(m, path)
    return tb, m, path


def test_round_trip_bit_identical(saved):
    tb, m, path = saved
    back = load_model(path)
    assert back.vocab.words == m.vocab.words and back.vocab.labels == m.vocab.labels
    assert back.config == m.config
    for (n1, t1), (n2, t2) in zip(m.store, back.store):
        assert n1 == n2 and torch.equal(t1, t2)
    for s in tb:
        a, b = parse(m, s), parse(back, s)
        assert a.heads == b.heads and a.labels == b.labels
        assert np.array_equal(a.composed, b.composed)


def test_truncated_file(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    (tmp_path / "t.model").write_bytes(raw[:-10])
    with pytest.raises(IntegrityError):
        load_model(tmp_path / "t.model")
    (tmp_path / "h.model").write_bytes(raw[:40])
    with pytest.raises(IntegrityError):
        load_model(tmp_path / "h.model")


def test_corrupted_block(saved, tmp_path):
    _, _, path = saved
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    (tmp_path / "c.model").write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="checksum"):
        load_model(tmp_path / "c.model")


def test_version_refusal(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes().replace(b"NUCLEUS-PROBE-MODEL 1\n", b"NUCLEUS-PROBE-MODEL 7\n", 1)
    (tmp_path / "v.model").write_bytes(raw)
    with pytest.raises(VersionError, match="7.*1"):
        load_model(tmp_path / "v.model")
    (tmp_path / "x.model").write_bytes(b"hello\n")
    with pytest.raises(ContainerError):
        load_model(tmp_path / "x.model")
