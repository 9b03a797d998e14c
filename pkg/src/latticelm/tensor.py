"""Dense float64 tensors with tape-based reverse-mode differentiation.

Covers what recurrent lattice models actually need: vectors and matrices,
elementwise arithmetic, matrix-vector products, log-space reductions, and a
per-example tape that replays gradient rules in reverse recording order.
Computation graphs are dynamic: every sentence builds its own tape.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "active_graph",
    "accumulate_grad",
    "constant",
    "parameter",
    "zeros",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "clamp_min",
    "matvec",
    "affine",
    "log_softmax",
    "logsumexp",
    "logaddexp",
    "concat",
    "stack",
    "vsum",
    "pick",
    "slice_vec",
    "gather_row",
    "weighted_sum",
    "grad_check",
]


class Tensor:
    """A dense float64 array plus a gradient slot.

    Data is treated as immutable once an op has consumed it (in-place
    parameter updates happen only between graphs). Gradients accumulate
    additively across every use of the tensor during ``Graph.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(dim: int) -> Tensor:
    return Tensor(np.zeros(dim))


class _GraphState(threading.local):
    def __init__(self):
        self.graph: "Graph | None" = None


_STATE = _GraphState()


def active_graph() -> "Graph | None":
    return _STATE.graph


class Graph:
    """An ordered tape of recorded operations.

    Used as a context manager; ops executed inside the block append their
    backward rules to the tape whenever an input requires gradients.
    Distinct graphs on distinct threads do not interfere.
    """

    __slots__ = ("_tape", "_prev")

    def __init__(self):
        self._tape: list[tuple[tuple[Tensor, ...], Callable[[], None]]] = []

    def __enter__(self) -> "Graph":
        self._prev = _STATE.graph
        _STATE.graph = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _STATE.graph = self._prev

    def __len__(self) -> int:
        return len(self._tape)

    def record(self, outputs: tuple[Tensor, ...], backward: Callable[[], None]) -> None:
        """Append a custom op. ``backward`` reads ``out.grad`` from each output
        and must accumulate into the op's inputs via ``accumulate_grad``."""
        for out in outputs:
            out.requires_grad = True
        self._tape.append((outputs, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ValueError(f"backward target must be scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise ValueError(f"backward target is not finite: {loss.data}")
        loss.grad = np.ones((), dtype=np.float64)
        for outputs, bw in reversed(self._tape):
            for out in outputs:
                if out.grad is not None:
                    bw()
                    break

    def clear(self) -> None:
        self._tape.clear()


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable[[], None]) -> Tensor:
    graph = _STATE.graph
    if graph is not None and any(t.requires_grad for t in inputs):
        graph.record((out,), backward)
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return g if g.shape == shape else np.asarray(g.sum())


def _check_elementwise(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ValueError(f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    out = Tensor(a.data + b.data)

    def bw():
        g = out.grad
        accumulate_grad(a, _reduce_to(g, a.data.shape))
        accumulate_grad(b, _reduce_to(g, b.data.shape))

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bw():
        g = out.grad
        accumulate_grad(a, _reduce_to(g, a.data.shape))
        accumulate_grad(b, _reduce_to(-g, b.data.shape))

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bw():
        g = out.grad
        accumulate_grad(a, _reduce_to(g * b.data, a.data.shape))
        accumulate_grad(b, _reduce_to(g * a.data, b.data.shape))

    return _record(out, (a, b), bw)


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.data * k)

    def bw():
        accumulate_grad(a, out.grad * k)

    return _record(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)

    def bw():
        accumulate_grad(a, out.grad * y * (1.0 - y))

    return _record(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def bw():
        accumulate_grad(a, out.grad * (1.0 - y * y))

    return _record(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)

    def bw():
        accumulate_grad(a, out.grad * y)

    return _record(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(a.data))

    def bw():
        accumulate_grad(a, out.grad / a.data)

    return _record(out, (a,), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = Tensor(np.maximum(a.data, floor))

    def bw():
        accumulate_grad(a, out.grad * (a.data >= floor))

    return _record(out, (a,), bw)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.data.shape} @ {x.data.shape}")
    out = Tensor(w.data @ x.data)

    def bw():
        g = out.grad
        accumulate_grad(w, np.outer(g, x.data))
        accumulate_grad(x, w.data.T @ g)

    return _record(out, (w, x), bw)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"affine: incompatible shapes {w.data.shape} @ {x.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"affine: bias shape {b.data.shape} mismatches {w.data.shape}")
    out = Tensor(w.data @ x.data + b.data)

    def bw():
        g = out.grad
        accumulate_grad(w, np.outer(g, x.data))
        accumulate_grad(x, w.data.T @ g)
        accumulate_grad(b, g)

    return _record(out, (w, x, b), bw)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.size == 0:
        raise ValueError("log_softmax: input must be a non-empty vector")
    if not np.all(np.isfinite(a.data)):
        raise ValueError("log_softmax: input contains non-finite entries")
    m = a.data.max()
    shifted = a.data - m
    lse = m + np.log(np.exp(shifted).sum())
    y = a.data - lse
    out = Tensor(y)

    def bw():
        g = out.grad
        accumulate_grad(a, g - np.exp(y) * g.sum())

    return _record(out, (a,), bw)


def logsumexp(a: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.size == 0:
        raise ValueError("logsumexp: input must be a non-empty vector")
    m = a.data.max()
    if not np.isfinite(m):
        raise ValueError("logsumexp: input contains non-finite entries")
    y = m + np.log(np.exp(a.data - m).sum())
    out = Tensor(y)

    def bw():
        accumulate_grad(a, np.exp(a.data - y) * out.grad)

    return _record(out, (a,), bw)


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != () or b.data.shape != ():
        raise ValueError("logaddexp: expects scalars")
    y = np.logaddexp(a.data, b.data)
    out = Tensor(y)

    def bw():
        g = out.grad
        wa = np.exp(a.data - y)
        accumulate_grad(a, g * wa)
        accumulate_grad(b, g * (1.0 - wa))

    return _record(out, (a, b), bw)


def concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat: empty input")
    out = Tensor(np.concatenate([p.data for p in parts]))

    def bw():
        g = out.grad
        offset = 0
        for p in parts:
            n = p.data.shape[0]
            accumulate_grad(p, g[offset : offset + n])
            offset += n

    return _record(out, tuple(parts), bw)


def stack(scalars: Sequence[Tensor]) -> Tensor:
    if not scalars:
        raise ValueError("stack: empty input")
    out = Tensor(np.array([s.data for s in scalars]))

    def bw():
        g = out.grad
        for i, s in enumerate(scalars):
            accumulate_grad(s, g[i])

    return _record(out, tuple(scalars), bw)


def vsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bw():
        accumulate_grad(a, np.full(a.data.shape, out.grad))

    return _record(out, (a,), bw)


def pick(a: Tensor, i: int) -> Tensor:
    if not 0 <= i < a.data.shape[0]:
        raise IndexError(f"pick: index {i} out of range for length {a.data.shape[0]}")
    out = Tensor(a.data[i])

    def bw():
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i] += out.grad

    return _record(out, (a,), bw)


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.data.shape[0]:
        raise IndexError(f"slice_vec: [{start}:{stop}) out of range for length {a.data.shape[0]}")
    out = Tensor(a.data[start:stop])

    def bw():
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += out.grad

    return _record(out, (a,), bw)


def gather_row(m: Tensor, i: int) -> Tensor:
    if m.data.ndim != 2:
        raise ValueError("gather_row: expects a matrix")
    if not 0 <= i < m.data.shape[0]:
        raise IndexError(f"gather_row: row {i} out of range for {m.data.shape[0]} rows")
    out = Tensor(m.data[i])

    def bw():
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            m.grad[i] += out.grad

    return _record(out, (m,), bw)


def weighted_sum(w: Tensor, vectors: Sequence[Tensor]) -> Tensor:
    if w.data.ndim != 1 or len(vectors) != w.data.shape[0]:
        raise ValueError("weighted_sum: weight length must match vector count")
    if not vectors:
        raise ValueError("weighted_sum: empty input")
    vmat = np.stack([v.data for v in vectors])
    out = Tensor(w.data @ vmat)

    def bw():
        g = out.grad
        accumulate_grad(w, vmat @ g)
        for i, v in enumerate(vectors):
            accumulate_grad(v, w.data[i] * g)

    return _record(out, (w, *vectors), bw)


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare tape gradients of ``fn()`` against central finite differences.

    ``fn`` must rebuild its graph from the tensors' current data on every
    call and return a scalar. Returns the worst relative error over every
    coordinate, with the denominator floored at 1 so that near-zero
    gradients are judged on absolute error.
    """
    for t in tensors:
        t.zero_grad()
    with Graph() as graph:
        loss = fn()
        graph.backward(loss)
    analytic = [np.array(t.grad) if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def eval_loss() -> float:
        value = fn().data
        if not np.isfinite(value):
            raise ValueError("grad_check: non-finite value during finite differencing")
        return float(value)

    worst = 0.0
    for t, grads in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grads.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            fp = eval_loss()
            flat[idx] = orig - step
            fm = eval_loss()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = abs(gflat[idx] - numeric) / max(1.0, abs(gflat[idx]), abs(numeric))
            worst = max(worst, err)
    return worst
