"""Arc-hybrid transition system with SWAP and a static-dynamic oracle.

Tokens are numbered 1..n; the artificial root is 0 and sits at the end of
the buffer. Arc-hybrid arcs: LEFT-ARC attaches the stack top to the buffer
front, RIGHT-ARC attaches the stack top to the item below it. SWAP moves the
stack top back into the buffer, right behind the buffer front.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

SHIFT, SWAP, LEFT, RIGHT = "SHIFT", "SWAP", "LEFT", "RIGHT"
KINDS = (SHIFT, SWAP, LEFT, RIGHT)
ROOT = 0


class IllegalTransition(RuntimeError):
    pass


@dataclass
class Configuration:
    n: int
    stack: list[int] = field(default_factory=list)
    buffer: list[int] = field(default_factory=list)
    heads: list[int] = field(default_factory=list)  # index 0 unused; -1 = unattached
    labels: list[Optional[str]] = field(default_factory=list)

    @classmethod
    def initial(cls, n: int) -> "Configuration":
        return cls(n, [], list(range(1, n + 1)) + [ROOT], [-1] * (n + 1), [None] * (n + 1))

    def copy(self) -> "Configuration":
        return Configuration(self.n, list(self.stack), list(self.buffer), list(self.heads), list(self.labels))

    @property
    def s0(self) -> Optional[int]:
        return self.stack[-1] if self.stack else None

    @property
    def s1(self) -> Optional[int]:
        return self.stack[-2] if len(self.stack) > 1 else None

    @property
    def b0(self) -> Optional[int]:
        return self.buffer[0] if self.buffer else None

    def is_terminal(self) -> bool:
        return not self.stack and self.buffer == [ROOT]

    def arcs(self) -> set[tuple[int, str, int]]:
        return {(self.heads[d], self.labels[d], d) for d in range(1, self.n + 1) if self.heads[d] >= 0}


def legal_transitions(c: Configuration) -> set[str]:
    """Unlabeled transitions applicable in ``c``.

    LEFT-ARC onto the artificial root requires a single stack item, which keeps
    the tree single-rooted.
    """
    legal = set()
    stack, buf = c.stack, c.buffer
    if buf and buf[0] != ROOT:
        legal.add(SHIFT)
    if stack and buf and (buf[0] != ROOT or len(stack) == 1):
        legal.add(LEFT)
    if len(stack) >= 2:
        legal.add(RIGHT)
    if stack and buf and buf[0] != ROOT and stack[-1] < buf[0]:
        legal.add(SWAP)
    return legal


def apply_transition(c: Configuration, kind: str, label: Optional[str] = None) -> Optional[tuple[int, int]]:
    """Mutate ``c``; returns the created arc as (head, dependent) or None."""
    if kind not in legal_transitions(c):
        raise IllegalTransition(f"{kind} is not legal with stack={c.stack} buffer={c.buffer}")
    if kind == SHIFT:
        c.stack.append(c.buffer.pop(0))
        return None
    if kind == SWAP:
        c.buffer.insert(1, c.stack.pop())
        return None
    if kind in (LEFT, RIGHT) and label is None:
        raise IllegalTransition(f"{kind} needs a label")
    dep = c.stack.pop()
    head = c.buffer[0] if kind == LEFT else c.stack[-1]
    c.heads[dep] = head
    c.labels[dep] = label
    return head, dep


def projective_order(heads: Sequence[int]) -> list[int]:
    """Position of each token in the in-order traversal of the gold tree.

    ``heads[i - 1]`` is the head of token i. Returns a list indexed 0..n with
    the root given the last position.
    """
    n = len(heads)
    kids: list[list[int]] = [[] for _ in range(n + 1)]
    for d, h in enumerate(heads, start=1):
        kids[h].append(d)
    order: list[int] = []
    # iterative in-order walk: left children, node, right children
    stack: list[tuple[int, bool]] = [(0, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        left = [k for k in kids[node] if k < node]
        right = [k for k in kids[node] if k > node]
        for k in reversed(right):
            stack.append((k, False))
        stack.append((node, True))
        for k in reversed(left):
            stack.append((k, False))
    order.remove(0)
    pos = [0] * (n + 1)
    for p, tok in enumerate(order, start=1):
        pos[tok] = p
    pos[ROOT] = n + 1
    return pos


def is_projective(heads: Sequence[int]) -> bool:
    arcs = [(min(d, h), max(d, h)) for d, h in enumerate(heads, start=1) if h > 0]
    root_children = [d for d, h in enumerate(heads, start=1) if h == 0]
    # arcs from the artificial root at position 0
    arcs += [(0, d) for d in root_children]
    for a, b in arcs:
        for c_, d in arcs:
            if a < c_ < b < d:
                return False
    return True


@dataclass
class Gold:
    heads: list[int]  # indexed 0..n, heads[0] unused
    labels: list[Optional[str]]
    proj: list[int]
    children: list[list[int]]

    @classmethod
    def from_heads(cls, heads: Sequence[int], labels: Sequence[str]) -> "Gold":
        n = len(heads)
        children: list[list[int]] = [[] for _ in range(n + 1)]
        for d, h in enumerate(heads, start=1):
            children[h].append(d)
        return cls([-1] + list(heads), [None] + list(labels), projective_order(heads), children)


def swap_needed(c: Configuration, gold: Gold) -> bool:
    return bool(c.stack) and bool(c.buffer) and gold.proj[c.stack[-1]] > gold.proj[c.buffer[0]]


def oracle_costs(c: Configuration, gold: Gold) -> dict[str, int]:
    """Structural cost of each legal unlabeled transition.

    SHIFT / LEFT / RIGHT: number of gold arcs made unreachable (arc-hybrid
    dynamic oracle). SWAP is static: free exactly when the stack top comes
    after the buffer front in projective order, and then SHIFT is charged one
    extra unit. When the buffer front itself is out of projective order,
    SHIFT is free: it only starts moving that token further back.
    """
    legal = legal_transitions(c)
    costs: dict[str, int] = {}
    s0, s1, b0 = c.s0, c.s1, c.b0
    in_buffer = set(c.buffer)
    in_stack = set(c.stack)
    need_swap = swap_needed(c, gold) and SWAP in legal
    gh = gold.heads
    if SHIFT in legal:
        if need_swap:
            cost = 1
        elif any(gold.proj[t] < gold.proj[b0] for t in c.buffer):
            cost = 0
        else:
            cost = sum(1 for d in gold.children[b0] if d in in_stack)
            if gh[b0] in in_stack and gh[b0] != s0:
                cost += 1
            # the root arc needs its dependent alone on the stack
            if gh[b0] == ROOT and c.stack:
                cost += 1
        costs[SHIFT] = cost
    if LEFT in legal or RIGHT in legal:
        # a stack top that still has to travel behind buffer tokens can reach
        # heads and dependents deeper in the stack again
        pending = any(gold.proj[t] < gold.proj[s0] for t in c.buffer)
        lost_deps = sum(1 for d in gold.children[s0] if d in in_buffer or (pending and d in in_stack))
        h = gh[s0]
        head_alive = h in in_buffer or h == s1 or (pending and h in in_stack)
        if h == ROOT and len(c.stack) > 1 and not pending:
            head_alive = False
        if LEFT in legal:
            costs[LEFT] = lost_deps + (1 if h != b0 and head_alive else 0)
        if RIGHT in legal:
            costs[RIGHT] = lost_deps + (1 if h != s1 and head_alive else 0)
    if SWAP in legal:
        costs[SWAP] = 0 if need_swap else 1
    return costs


def labeled_cost(c: Configuration, gold: Gold, kind: str, label: Optional[str], costs: dict[str, int]) -> int:
    """Structural cost plus one for the wrong label on a gold arc."""
    cost = costs[kind]
    if kind in (LEFT, RIGHT):
        head = c.b0 if kind == LEFT else c.s1
        dep = c.s0
        if gold.heads[dep] == head and gold.labels[dep] != label:
            cost += 1
    return cost


# preference among equally cheap transitions when following the oracle
ORACLE_PREFERENCE = (LEFT, RIGHT, SWAP, SHIFT)


def oracle_transitions(heads: Sequence[int], labels: Sequence[str]) -> Iterator[tuple[str, Optional[str]]]:
    """Follow minimum-cost transitions from the initial configuration to the end."""
    gold = Gold.from_heads(heads, labels)
    c = Configuration.initial(len(heads))
    while not c.is_terminal():
        costs = oracle_costs(c, gold)
        best = min(costs.values())
        kind = next(k for k in ORACLE_PREFERENCE if costs.get(k) == best)
        label = None
        if kind in (LEFT, RIGHT):
            label = gold.labels[c.s0]
        apply_transition(c, kind, label)
        yield kind, label


def run_oracle(heads: Sequence[int], labels: Sequence[str]) -> Configuration:
    c = Configuration.initial(len(heads))
    for kind, label in oracle_transitions(heads, labels):
        apply_transition(c, kind, label)
    return c
