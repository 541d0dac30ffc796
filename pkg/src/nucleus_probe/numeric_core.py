"""Dense float64 tensor operations with reverse-mode gradients.

Thin layer over torch autograd: every op checks shapes and finiteness, and
the recurrent cells are written out explicitly so they can be checked
against scalar references. Parameters live in an ordered ``ParamStore``.
"""

from __future__ import annotations

import math
import random
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64
torch.set_default_dtype(DTYPE)

CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class UsageError(ValueError):
    pass


def seed_rng(seed: int) -> torch.Generator:
    """Seed every RNG the toolkit touches; returns a dedicated torch generator."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def set_deterministic(threads: int = 1) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)


def _finite(t: torch.Tensor, op: str) -> torch.Tensor:
    if CHECK_FINITE and not bool(torch.isfinite(t).all()):
        raise NumericError(f"{op}: non-finite values in result")
    return t


def tensor(values, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)


def affine(W: torch.Tensor, x: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``W x + b``; ``x`` may be a vector or a batch of row vectors."""
    if W.dim() != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: W{tuple(W.shape)} incompatible with x{tuple(x.shape)}")
    y = x @ W.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ShapeError(f"affine: bias{tuple(b.shape)} incompatible with W{tuple(W.shape)}")
        y = y + b
    return _finite(y, "affine")


def concat(xs: Sequence[torch.Tensor]) -> torch.Tensor:
    if not xs:
        raise UsageError("concat of nothing")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ShapeError(f"concat: {tuple(xs[0].shape)} vs {tuple(x.shape)}")
    return torch.cat(list(xs), dim=-1)


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def logistic(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax_xent(logits: torch.Tensor, gold) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean cross-entropy of ``gold`` indices and the softmax probabilities."""
    batched = logits.dim() == 2
    lg = logits if batched else logits.unsqueeze(0)
    gold_t = torch.as_tensor(gold if batched else [gold], dtype=torch.long)
    if gold_t.shape[0] != lg.shape[0]:
        raise ShapeError(f"softmax_xent: logits{tuple(logits.shape)} vs gold{tuple(gold_t.shape)}")
    if int(gold_t.min()) < 0 or int(gold_t.max()) >= lg.shape[1]:
        raise ShapeError(f"softmax_xent: gold index out of range for {lg.shape[1]} classes")
    logp = torch.log_softmax(lg, dim=-1)
    loss = -logp.gather(1, gold_t.unsqueeze(1)).mean()
    probs = logp.exp()
    return _finite(loss, "softmax_xent"), probs if batched else probs[0]


def hinge(scores: torch.Tensor, good: Iterable[int], bad: Iterable[int], margin: float = 1.0) -> torch.Tensor:
    """``max(0, margin - max(good) + max(bad))``; zero when either set is empty."""
    good = list(good)
    bad = list(bad)
    if not good or not bad:
        return scores.sum() * 0.0
    g = scores[good].max()
    b = scores[bad].max()
    return _finite(torch.clamp(margin - g + b, min=0.0), "hinge")


# -- parameters --------------------------------------------------------------


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class ParamStore:
    """Ordered name -> tensor map of trainable parameters."""

    def __init__(self, gen: torch.Generator | None = None):
        self.params: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        self.gen = gen

    def add(self, name: str, shape: Sequence[int], fan: tuple[int, int] | None = None,
            const: float | None = None) -> torch.Tensor:
        if name in self.params:
            raise UsageError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if const is not None:
            t = torch.full(shape, float(const), dtype=DTYPE)
        else:
            if fan is None:
                fan = (shape[-1], shape[0]) if len(shape) == 2 else (1, shape[0])
            bound = glorot_bound(*fan)
            t = (torch.rand(shape, generator=self.gen, dtype=DTYPE) * 2 - 1) * bound
        t.requires_grad_(True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def tensors(self) -> list[torch.Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def snapshot(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict((k, v.detach().clone()) for k, v in self.params.items())

    def restore(self, snap) -> None:
        with torch.no_grad():
            for k, v in snap.items():
                self.params[k].copy_(v)


# -- recurrent cells ---------------------------------------------------------


@dataclass
class LstmParams:
    """Gate weights stacked as [input, forget, output, candidate]."""

    W_x: torch.Tensor  # (4H, D)
    W_h: torch.Tensor  # (4H, H)
    b: torch.Tensor  # (4H,)

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[1]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, input_dim: int, hidden_dim: int,
               forget_bias: float = 1.0) -> "LstmParams":
        H = hidden_dim
        W_x = store.add(f"{prefix}.W_x", (4 * H, input_dim), fan=(input_dim, H))
        W_h = store.add(f"{prefix}.W_h", (4 * H, H), fan=(H, H))
        b = store.add(f"{prefix}.b", (4 * H,), const=0.0)
        with torch.no_grad():
            b[H:2 * H] = forget_bias
        return cls(W_x, W_h, b)

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str) -> "LstmParams":
        return cls(store[f"{prefix}.W_x"], store[f"{prefix}.W_h"], store[f"{prefix}.b"])


def _cell(gates: torch.Tensor, c_prev: torch.Tensor, H: int) -> tuple[torch.Tensor, torch.Tensor]:
    i = torch.sigmoid(gates[..., :H])
    f = torch.sigmoid(gates[..., H:2 * H])
    o = torch.sigmoid(gates[..., 2 * H:3 * H])
    g = torch.tanh(gates[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * torch.tanh(c)
    return h, c


def lstm_step(p: LstmParams, x_t: torch.Tensor, h_prev: torch.Tensor, c_prev: torch.Tensor):
    """One LSTM recurrence; inputs may carry a leading batch dimension."""
    H = p.hidden_dim
    if x_t.shape[-1] != p.input_dim:
        raise ShapeError(f"lstm_step: x{tuple(x_t.shape)} vs input dim {p.input_dim}")
    if h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(f"lstm_step: h{tuple(h_prev.shape)} c{tuple(c_prev.shape)} vs hidden {H}")
    gates = x_t @ p.W_x.T + h_prev @ p.W_h.T + p.b
    h, c = _cell(gates, c_prev, H)
    return _finite(h, "lstm_step"), c


def lstm_run(p: LstmParams, xs: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Run over ``xs`` of shape (T, D) or (T, B, D); returns hidden states of the same leading shape.

    With ``mask`` (T, B) positions where the mask is 0 carry the previous state
    through unchanged, so the last output is the state at each sequence's end.
    """
    if xs.shape[-1] != p.input_dim:
        raise ShapeError(f"lstm_run: xs{tuple(xs.shape)} vs input dim {p.input_dim}")
    H = p.hidden_dim
    proj = xs @ p.W_x.T + p.b  # all input projections at once
    h = xs.new_zeros(xs.shape[1:-1] + (H,))
    c = h
    out = []
    for t in range(xs.shape[0]):
        h_new, c_new = _cell(proj[t] + h @ p.W_h.T, c, H)
        if mask is not None:
            m = mask[t].unsqueeze(-1)
            h_new = m * h_new + (1 - m) * h
            c_new = m * c_new + (1 - m) * c
        h, c = h_new, c_new
        out.append(h)
    return _finite(torch.stack(out), "lstm_run")


def bilstm_encode(fwd: Sequence[LstmParams], bwd: Sequence[LstmParams], xs) -> torch.Tensor:
    """Stacked BiLSTM over a sequence; row i is [forward_i; backward_i] of the top layer.

    Layer k > 0 reads the concatenated outputs of layer k - 1.
    """
    if isinstance(xs, (list, tuple)):
        if not xs:
            raise UsageError("bilstm_encode: empty sequence")
        xs = torch.stack(list(xs))
    if xs.shape[0] == 0:
        raise UsageError("bilstm_encode: empty sequence")
    if len(fwd) != len(bwd) or not fwd:
        raise UsageError("bilstm_encode: forward and backward stacks must have equal non-zero depth")
    layer_in = xs
    for pf, pb in zip(fwd, bwd):
        hf = lstm_run(pf, layer_in)
        hb = lstm_run(pb, layer_in.flip(0)).flip(0)
        layer_in = torch.cat([hf, hb], dim=-1)
    return layer_in


def bilstm_final(fwd: LstmParams, bwd: LstmParams, xs: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    """Final states of a one-layer BiLSTM over a padded batch (T, B, D) -> (B, 2H)."""
    T, B = xs.shape[0], xs.shape[1]
    lengths_t = torch.as_tensor(list(lengths))
    steps = torch.arange(T).unsqueeze(1)
    mask = (steps < lengths_t.unsqueeze(0)).to(DTYPE)
    hf = lstm_run(fwd, xs, mask)[-1]
    # reverse each sequence within its own length
    idx = (lengths_t.unsqueeze(0) - 1 - steps).clamp(min=0)
    rev = xs.gather(0, idx.unsqueeze(-1).expand(T, B, xs.shape[-1]))
    hb = lstm_run(bwd, rev, mask)[-1]
    return torch.cat([hf, hb], dim=-1)


# -- gradients and optimisation ---------------------------------------------


def backward(loss: torch.Tensor) -> None:
    """Accumulate d loss / d param into every leaf's ``.grad``."""
    if loss.numel() != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    _finite(loss.detach(), "backward")
    if loss.requires_grad:
        loss.backward()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict | None = None
    v: dict | None = None


def adam_update(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None], state: AdamState,
                lr: float | None = None) -> None:
    """In-place Adam step with bias correction; ``None`` gradients are skipped."""
    if state.m is None:
        state.m, state.v = {}, {}
    state.t += 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    with torch.no_grad():
        for k, (p, g) in enumerate(zip(params, grads)):
            if g is None:
                continue
            if k not in state.m:
                state.m[k] = torch.zeros_like(p)
                state.v[k] = torch.zeros_like(p)
            m, v = state.m[k], state.v[k]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))


def finite_difference_grad(f, x: torch.Tensor, eps: float = 1e-4) -> torch.Tensor:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (modified in place)."""
    g = torch.zeros_like(x)
    flat = x.detach().view(-1)
    gflat = g.view(-1)
    with torch.no_grad():
        for k in range(flat.numel()):
            orig = float(flat[k])
            flat[k] = orig + eps
            fp = float(f())
            flat[k] = orig - eps
            fm = float(f())
            flat[k] = orig
            gflat[k] = (fp - fm) / (2 * eps)
    return g


def gradient_check(f, params: Sequence[torch.Tensor], eps: float = 1e-5,
                   coords: int | None = None, gen: np.random.Generator | None = None) -> float:
    """Largest relative error between autograd and central differences.

    ``f`` builds a scalar loss from ``params``. With ``coords`` only that many
    randomly chosen entries per parameter are compared.
    """
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    gen = gen or np.random.default_rng(0)
    with torch.no_grad():
        for p, a in zip(params, analytic):
            flat = p.view(-1)
            aflat = a.view(-1)
            idx = range(flat.numel()) if coords is None else gen.choice(flat.numel(), min(coords, flat.numel()),
                                                                          replace=False)
            for k in idx:
                k = int(k)
                orig = float(flat[k])
                flat[k] = orig + eps
                fp = float(f())
                flat[k] = orig - eps
                fm = float(f())
                flat[k] = orig
                num = (fp - fm) / (2 * eps)
                ana = float(aflat[k])
                denom = max(abs(num), abs(ana), 1e-6)
                worst = max(worst, abs(num - ana) / denom)
    return worst
