import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nucleus_probe.parser.transitions import (
    LEFT,
    RIGHT,
    ROOT,
    SHIFT,
    SWAP,
    Configuration,
    Gold,
    IllegalTransition,
    apply_transition,
    is_projective,
    labeled_cost,
    legal_transitions,
    oracle_costs,
    projective_order,
    run_oracle,
)
from nucleus_probe.synthetic import generate_treebank


def random_tree(rng: random.Random, n: int) -> list[int]:
    order = list(range(1, n + 1))
    rng.shuffle(order)
    heads = [0] * (n + 1)
    for k, tok in enumerate(order[1:], start=1):
        heads[tok] = order[rng.randrange(k)]
    return heads[1:]


trees = st.builds(lambda seed, n: random_tree(random.Random(seed), n), st.integers(0, 10**9), st.integers(1, 9))


def labels_for(heads):
    return ["root" if h == 0 else f"l{d % 3}" for d, h in enumerate(heads, start=1)]


def legal_reference(c: Configuration) -> set[str]:
    # precondition table written out independently
    out = set()
    b0 = c.buffer[0] if c.buffer else None
    if b0 is not None and b0 != ROOT:
        out.add(SHIFT)
        if c.stack and c.stack[-1] < b0:
            out.add(SWAP)
    if c.stack and b0 is not None:
        if b0 != ROOT or len(c.stack) == 1:
            out.add(LEFT)
    if len(c.stack) > 1:
        out.add(RIGHT)
    return out


def test_initial_two_words():
    assert legal_transitions(Configuration.initial(2)) == {SHIFT}


def test_terminal_empty():
    c = Configuration(2, [], [ROOT], [-1, 2, 0], [None, "x", "root"])
    assert c.is_terminal()
    assert legal_transitions(c) == set()


def test_illegal_raises():
    with pytest.raises(IllegalTransition):
        apply_transition(Configuration.initial(2), LEFT, "x")


def test_random_configs_match_reference():
    rng = random.Random(0)
    for _ in range(10_000):
        n = rng.randint(1, 7)
        c = Configuration.initial(n)
        for _ in range(rng.randint(0, 3 * n)):
            legal = sorted(legal_transitions(c))
            if not legal:
                break
            apply_transition(c, rng.choice(legal), "x")
        assert legal_transitions(c) == legal_reference(c)


def test_partition_invariant_and_single_root():
    rng = random.Random(1)
    for _ in range(500):
        n = rng.randint(1, 8)
        c = Configuration.initial(n)
        while not c.is_terminal():
            apply_transition(c, rng.choice(sorted(legal_transitions(c))), "x")
            attached = {d for d in range(1, n + 1) if c.heads[d] >= 0}
            parts = [set(c.stack), set(c.buffer) - {ROOT}, attached]
            assert sum(len(p) for p in parts) == n and set().union(*parts) == set(range(1, n + 1))
        assert all(c.heads[d] >= 0 for d in range(1, n + 1))
        assert sum(c.heads[d] == 0 for d in range(1, n + 1)) == 1


def test_projective_order():
    # 1 <- 2 -> 3 projective: order equals position
    assert projective_order([2, 0, 2])[1:4] == [1, 2, 3]
    assert is_projective([2, 0, 2])
    assert not is_projective([3, 0, 2, 1])


def _reaches_gold(heads, labels, seq):
    c = Configuration.initial(len(heads))
    for kind, lab in seq:
        if kind not in legal_transitions(c):
            return False
        apply_transition(c, kind, lab)
    return c.is_terminal() and c.heads[1:] == list(heads) and c.labels[1:] == list(labels)


def test_zero_cost_paths_projective_three_words():
    # every projective 3-word tree: each zero-cost path ends in gold, and brute force agrees it exists
    for heads in ([2, 0, 2], [0, 1, 2], [2, 3, 0], [3, 3, 0], [0, 1, 1]):
        labels = labels_for(heads)
        gold = Gold.from_heads(heads, labels)
        finals = []

        def walk(c):
            if c.is_terminal():
                finals.append((tuple(c.heads[1:]), tuple(c.labels[1:])))
                return
            costs = oracle_costs(c, gold)
            for kind in sorted(legal_transitions(c)):
                labs = [labels[c.stack[-1] - 1]] if kind in (LEFT, RIGHT) else [None]
                for lab in labs:
                    if labeled_cost(c, gold, kind, lab, costs) == 0:
                        nxt = c.copy()
                        apply_transition(nxt, kind, lab)
                        walk(nxt)

        walk(Configuration.initial(3))
        assert finals and set(finals) == {(tuple(heads), tuple(labels))}


def test_wrong_head_left_arc_costs():
    heads = [3, 0, 2]  # gold head of 1 is 3, still in the buffer
    gold = Gold.from_heads(heads, labels_for(heads))
    c = Configuration.initial(3)
    apply_transition(c, SHIFT)
    assert c.buffer[0] == 2
    assert oracle_costs(c, gold)[LEFT] >= 1


def test_fully_correct_config_all_zero():
    heads = [2, 0]
    labels = labels_for(heads)
    gold = Gold.from_heads(heads, labels)
    c = Configuration.initial(2)
    apply_transition(c, SHIFT)
    apply_transition(c, LEFT, labels[0])
    apply_transition(c, SHIFT)
    assert oracle_costs(c, gold) == {LEFT: 0}
    assert labeled_cost(c, gold, LEFT, "wrong", oracle_costs(c, gold)) == 1


def test_swap_enables_crossing_arc():
    heads = [3, 4, 0, 3]  # 1<-3, 2<-4: crossing arcs
    assert not is_projective(heads)
    labels = labels_for(heads)
    # brute force over all sequences up to 2n+4 steps: some sequence builds the tree, all use SWAP
    found = []

    def search(c, seq, depth):
        if c.is_terminal():
            if c.heads[1:] == heads:
                found.append(tuple(seq))
            return
        if depth == 0:
            return
        for kind in sorted(legal_transitions(c)):
            lab = labels[c.stack[-1] - 1] if kind in (LEFT, RIGHT) else None
            nxt = c.copy()
            apply_transition(nxt, kind, lab)
            search(nxt, seq + [kind], depth - 1)

    search(Configuration.initial(4), [], 2 * 4 + 4)
    assert found and all(SWAP in s for s in found)
    assert run_oracle(heads, labels).heads[1:] == heads


def _max_reachable(c, gold, memo):
    key = (tuple(c.stack), tuple(c.buffer), tuple(c.heads))
    if key in memo:
        return memo[key]
    if c.is_terminal():
        best = 0
    else:
        best = -1
        for kind in legal_transitions(c) - {SWAP}:
            nxt = c.copy()
            arc = apply_transition(nxt, kind, "x")
            gain = 1 if arc and gold.heads[arc[1]] == arc[0] else 0
            best = max(best, gain + _max_reachable(nxt, gold, memo))
    memo[key] = best
    return best


@given(trees, st.integers(0, 10**6))
def test_dynamic_costs_match_brute_force_on_projective(heads, walk_seed):
    if not is_projective(heads) or len(heads) > 6:
        return
    gold = Gold.from_heads(heads, labels_for(heads))
    rng = random.Random(walk_seed)
    c = Configuration.initial(len(heads))
    memo = {}
    while not c.is_terminal():
        costs = oracle_costs(c, gold)
        here = _max_reachable(c, gold, memo)
        for kind in legal_transitions(c) - {SWAP}:
            nxt = c.copy()
            arc = apply_transition(nxt, kind, "x")
            gain = 1 if arc and gold.heads[arc[1]] == arc[0] else 0
            assert costs[kind] == here - gain - _max_reachable(nxt, gold, memo)
        apply_transition(c, rng.choice(sorted(legal_transitions(c) - {SWAP})), "x")


@given(trees, st.integers(0, 10**6))
def test_oracle_completeness_random_trees(heads, tie_seed):
    labels = labels_for(heads)
    gold = Gold.from_heads(heads, labels)
    rng = random.Random(tie_seed)
    c = Configuration.initial(len(heads))
    steps = 0
    while not c.is_terminal():
        costs = oracle_costs(c, gold)
        lo = min(costs.values())
        kind = rng.choice(sorted(k for k, v in costs.items() if v == lo))
        lab = labels[c.stack[-1] - 1] if kind in (LEFT, RIGHT) else None
        apply_transition(c, kind, lab)
        steps += 1
        assert steps < 4 * len(heads) ** 2 + 10
    assert c.heads[1:] == heads and c.labels[1:] == labels


def test_oracle_completeness_toy_treebank():
    tb = generate_treebank(300, seed=11)
    assert any(not is_projective(s.heads) for s in tb)
    for s in tb:
        c = run_oracle(s.heads, [t.deprel for t in s.tokens])
        assert c.heads[1:] == s.heads
