"""Recurrent building blocks: coupled-gate LSTM cells and stacks, a
bidirectional composer, tied output projections, variational dropout masks,
Glorot initialization, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .tensor import Tensor, accumulate_grad, active_graph, affine, matvec

State = tuple[Tensor, Tensor]


def glorot(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 1:
        fan = shape[0] + 1
    else:
        fan = shape[0] + shape[1]
    limit = np.sqrt(6.0 / fan)
    return rng.uniform(-limit, limit, size=shape)


class CoupledLstmCell:
    """Single LSTM layer whose forget gate is tied to the input gate (f = 1 - i).

    Each gate keeps separate input and recurrent weight matrices. The whole
    step runs as one fused tape op so per-edge graphs stay small.
    """

    GATE_NAMES = ("wxi", "whi", "bi", "wxo", "who", "bo", "wxg", "whg", "bg")

    def __init__(self, wxi, whi, bi, wxo, who, bo, wxg, whg, bg):
        self.wxi, self.whi, self.bi = wxi, whi, bi
        self.wxo, self.who, self.bo = wxo, who, bo
        self.wxg, self.whg, self.bg = wxg, whg, bg
        self.hidden_dim = wxi.data.shape[0]
        self.input_dim = wxi.data.shape[1]
        self.steps = 0  # lifetime count of cell applications

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "CoupledLstmCell":
        def mat_x():
            return Tensor(glorot((hidden_dim, input_dim), rng), requires_grad=True)

        def mat_h():
            return Tensor(glorot((hidden_dim, hidden_dim), rng), requires_grad=True)

        def vec():
            return Tensor(np.zeros(hidden_dim), requires_grad=True)

        return cls(mat_x(), mat_h(), vec(), mat_x(), mat_h(), vec(), mat_x(), mat_h(), vec())

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}_{name}": getattr(self, name) for name in self.GATE_NAMES}

    @property
    def params(self) -> tuple[Tensor, ...]:
        return tuple(getattr(self, name) for name in self.GATE_NAMES)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> State:
        self.steps += 1
        xd, hd, cd = x.data, h.data, c.data
        ai = self.wxi.data @ xd + self.whi.data @ hd + self.bi.data
        ao = self.wxo.data @ xd + self.who.data @ hd + self.bo.data
        ag = self.wxg.data @ xd + self.whg.data @ hd + self.bg.data
        gate_i = expit(ai)
        gate_o = expit(ao)
        cand = np.tanh(ag)
        c2d = (1.0 - gate_i) * cd + gate_i * cand
        ct = np.tanh(c2d)
        h2 = Tensor(gate_o * ct)
        c2 = Tensor(c2d)

        graph = active_graph()
        if graph is None or not (
            x.requires_grad or h.requires_grad or c.requires_grad or self.wxi.requires_grad
        ):
            return h2, c2
        cell = self

        def bw():
            gh = h2.grad
            gc = c2.grad
            if gh is not None:
                d_o = gh * ct
                d_ct = gh * gate_o * (1.0 - ct * ct)
                if gc is not None:
                    d_ct = d_ct + gc
                dao = d_o * gate_o * (1.0 - gate_o)
            else:
                d_ct = gc
                dao = None
            # c2 = (1 - i) * c + i * cand, so dc2/di = cand - c
            dai = d_ct * (cand - cd) * gate_i * (1.0 - gate_i)
            dag = d_ct * gate_i * (1.0 - cand * cand)

            dx = cell.wxi.data.T @ dai + cell.wxg.data.T @ dag
            dh = cell.whi.data.T @ dai + cell.whg.data.T @ dag
            accumulate_grad(cell.wxi, np.outer(dai, xd))
            accumulate_grad(cell.whi, np.outer(dai, hd))
            accumulate_grad(cell.bi, dai)
            accumulate_grad(cell.wxg, np.outer(dag, xd))
            accumulate_grad(cell.whg, np.outer(dag, hd))
            accumulate_grad(cell.bg, dag)
            if dao is not None:
                dx += cell.wxo.data.T @ dao
                dh += cell.who.data.T @ dao
                accumulate_grad(cell.wxo, np.outer(dao, xd))
                accumulate_grad(cell.who, np.outer(dao, hd))
                accumulate_grad(cell.bo, dao)
            accumulate_grad(x, dx)
            accumulate_grad(h, dh)
            accumulate_grad(c, d_ct * (1.0 - gate_i))

        graph.record((h2, c2), bw)
        return h2, c2


class LstmStack:
    """Layered LSTM; layer k feeds its hidden state to layer k+1."""

    def __init__(self, cells: Sequence[CoupledLstmCell]):
        if not cells:
            raise ValueError("LstmStack needs at least one cell")
        self.cells = list(cells)
        self.hidden_dim = self.cells[-1].hidden_dim

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, layers: int, rng: np.random.Generator) -> "LstmStack":
        cells = []
        for k in range(layers):
            cells.append(CoupledLstmCell.create(input_dim if k == 0 else hidden_dim, hidden_dim, rng))
        return cls(cells)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, cell in enumerate(self.cells):
            out.update(cell.named_params(f"{prefix}_l{k}"))
        return out

    def zero_state(self) -> list[State]:
        return [(Tensor(np.zeros(c.hidden_dim)), Tensor(np.zeros(c.hidden_dim))) for c in self.cells]

    def step(self, x: Tensor, states: Sequence[State], in_masks: Sequence[Tensor] | None = None) -> list[State]:
        from .tensor import mul

        new_states = []
        inp = x
        for k, cell in enumerate(self.cells):
            if in_masks is not None:
                inp = mul(inp, in_masks[k])
            h, c = cell.step(inp, *states[k])
            new_states.append((h, c))
            inp = h
        return new_states

    @property
    def step_count(self) -> int:
        """Total per-layer cell applications since construction."""
        return sum(cell.steps for cell in self.cells)


class BiLstmComposer:
    """Reads a token embedding sequence in both directions and concatenates
    the two final hidden states."""

    def __init__(self, fwd: CoupledLstmCell, bwd: CoupledLstmCell):
        self.fwd = fwd
        self.bwd = bwd
        self.output_dim = fwd.hidden_dim + bwd.hidden_dim

    @classmethod
    def create(cls, embed_dim: int, direction_dim: int, rng: np.random.Generator) -> "BiLstmComposer":
        return cls(
            CoupledLstmCell.create(embed_dim, direction_dim, rng),
            CoupledLstmCell.create(embed_dim, direction_dim, rng),
        )

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.fwd.named_params(f"{prefix}_fwd")
        out.update(self.bwd.named_params(f"{prefix}_bwd"))
        return out

    def compose(self, embeddings: Sequence[Tensor]) -> Tensor:
        from .tensor import concat

        if not embeddings:
            raise ValueError("compose: empty token sequence")
        hf = Tensor(np.zeros(self.fwd.hidden_dim))
        cf = Tensor(np.zeros(self.fwd.hidden_dim))
        for e in embeddings:
            hf, cf = self.fwd.step(e, hf, cf)
        hb = Tensor(np.zeros(self.bwd.hidden_dim))
        cb = Tensor(np.zeros(self.bwd.hidden_dim))
        for e in reversed(embeddings):
            hb, cb = self.bwd.step(e, hb, cb)
        return concat([hf, hb])


def tied_output_logits(hidden: Tensor, table: Tensor, bias: Tensor, projection: Tensor) -> Tensor:
    """logits = table @ (projection @ hidden) + bias.

    The table is the same tensor used for input lookups, so output rows and
    input embeddings share storage and gradients.
    """
    return affine(table, matvec(projection, hidden), bias)


def variational_dropout_mask(dim: int, rate: float, rng: int | np.random.Generator) -> np.ndarray:
    """One Bernoulli keep-mask scaled by 1/(1-rate), reused across time steps."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    keep = rng.random(dim) >= rate
    return keep / (1.0 - rate)


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam step, applied to parameter data in place.

    A missing or None gradient counts as zero: moments still decay.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        v *= state.beta2
        if g is not None:
            m += (1.0 - state.beta1) * g
            v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_gradients(params: dict[str, Tensor], threshold: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``threshold``.

    Returns the pre-clip norm. An infinite threshold leaves gradients
    untouched.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if np.isfinite(threshold) and norm > threshold and norm > 0.0:
        factor = threshold / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm
