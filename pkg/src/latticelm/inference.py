"""Marginalization over segmentation lattices.

One forward sweep visits nodes in position order. At each node the incoming
edge scores and source log-masses combine into the node's log-mass; the
node's hidden state is then assembled from the incoming local states under
one of four rules:

  direct    unweighted sum of incoming states
  mc        one incoming state sampled by predecessor probability
  marginal  expectation of incoming states under predecessor probability
  gumbel    relaxed one-hot sample at temperature tau

The log-mass arithmetic is identical in all four modes; the rules differ
only in what downstream predictions condition on. The final node's log-mass
is the sentence log-probability, summed over every segmentation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import Edge, Lattice, SegPath, enumerate_paths
from .tensor import (
    Tensor,
    add,
    clamp_min,
    constant,
    exp,
    log_softmax,
    logsumexp,
    scale,
    stack,
    sub,
    weighted_sum,
)

GUMBEL_LOG_FLOOR = -30.0


class ApproxMode(enum.Enum):
    DIRECT = "direct"
    MONTE_CARLO = "mc"
    MARGINAL = "marginal"
    GUMBEL = "gumbel"

    @classmethod
    def parse(cls, name: "str | ApproxMode") -> "ApproxMode":
        if isinstance(name, cls):
            return name
        for mode in cls:
            if mode.value == name:
                return mode
        raise ValueError(f"unknown approximation mode {name!r}")


@dataclass
class GumbelSchedule:
    """Exponentially annealed temperature, floored at tau_min."""

    tau0: float = 5.0
    tau_min: float = 0.5
    decay: float = 0.9995

    def tau_at(self, batch: int) -> float:
        return max(self.tau_min, self.tau0 * self.decay**batch)


@dataclass
class PredecessorDist:
    """Normalized mass over a node's incoming edges.

    ``joint`` holds source log-mass plus edge log-probability per edge;
    ``log_mass`` is their log-sum. ``weights`` is the numeric distribution.
    """

    edges: list[Edge]
    joint: Tensor
    log_mass: Tensor
    weights: np.ndarray


def predecessor_dist(edges: Sequence[Edge], edge_logprobs: Sequence[Tensor],
                     source_masses: Sequence[Tensor]) -> PredecessorDist:
    joint = stack([add(a, lp) for a, lp in zip(source_masses, edge_logprobs)])
    log_mass = logsumexp(joint)
    if not math.isfinite(log_mass.item()):
        raise ValueError("non-finite node mass during the forward sweep")
    weights = np.exp(joint.data - log_mass.data)
    return PredecessorDist(list(edges), joint, log_mass, weights)


def sample_predecessor(dist: PredecessorDist, rng: np.random.Generator) -> int:
    w = dist.weights / dist.weights.sum()
    return int(rng.choice(len(w), p=w))


def gumbel_weights(dist: PredecessorDist, tau: float, rng: np.random.Generator) -> Tensor:
    """Relaxed one-hot over incoming edges: softmax((floor(log M) + g) / tau).

    The noise is fixed at sampling time; gradients flow through the log
    predecessor masses only.
    """
    if tau <= 0.0:
        raise ValueError(f"gumbel temperature must be positive, got {tau}")
    log_m = clamp_min(sub(dist.joint, dist.log_mass), GUMBEL_LOG_FLOOR)
    noise = rng.gumbel(size=len(dist.edges))
    return exp(log_softmax(scale(add(log_m, constant(noise)), 1.0 / tau)))


StackState = list[tuple[Tensor, Tensor]]


def combine_states(
    mode: ApproxMode,
    dist: PredecessorDist,
    local_states: Sequence[StackState],
    tau: float | None = None,
    rng: np.random.Generator | None = None,
) -> StackState:
    """Merge the incoming local states into one node state, layer by layer."""
    if len(local_states) == 1:
        return list(local_states[0])  # every rule reduces to identity
    if mode is ApproxMode.MONTE_CARLO:
        if rng is None:
            raise ValueError("mc mode needs an rng")
        return list(local_states[sample_predecessor(dist, rng)])
    if mode is ApproxMode.DIRECT:
        w = constant(np.ones(len(local_states)))
    elif mode is ApproxMode.MARGINAL:
        w = exp(sub(dist.joint, dist.log_mass))
    elif mode is ApproxMode.GUMBEL:
        if rng is None:
            raise ValueError("gumbel mode needs an rng")
        if tau is None:
            raise ValueError("gumbel mode needs a temperature")
        w = gumbel_weights(dist, tau, rng)
    else:
        raise ValueError(f"unhandled mode {mode}")
    merged = []
    for layer in range(len(local_states[0])):
        h = weighted_sum(w, [s[layer][0] for s in local_states])
        c = weighted_sum(w, [s[layer][1] for s in local_states])
        merged.append((h, c))
    return merged


@dataclass
class ForwardResult:
    lattice: Lattice
    mode: ApproxMode
    log_mass: list[Tensor]  # per node
    edge_logprob: dict[Edge, Tensor]
    predecessors: list[PredecessorDist | None]
    cell_steps: int

    @property
    def logprob(self) -> Tensor:
        return self.log_mass[-1]

    @property
    def value(self) -> float:
        return self.logprob.item()

    def edge_logprob_values(self) -> dict[Edge, float]:
        return {e: lp.item() for e, lp in self.edge_logprob.items()}


def forward_marginalize(
    lattice: Lattice,
    run,
    mode: "str | ApproxMode" = ApproxMode.MARGINAL,
    tau: float | None = None,
    rng: np.random.Generator | None = None,
) -> ForwardResult:
    """One pass over the lattice; returns per-node log-masses, per-edge
    scores and predecessor distributions, plus the main-stack step count."""
    mode = ApproxMode.parse(mode)
    n = lattice.n_tokens
    states: list[StackState | None] = [None] * (n + 1)
    masses: list[Tensor | None] = [None] * (n + 1)
    locals_: dict[Edge, StackState] = {}
    scores: dict[Edge, Tensor] = {}
    preds: list[PredecessorDist | None] = [None] * (n + 1)

    states[0] = run.initial_state()
    base_steps = run.cell_steps
    masses[0] = constant(0.0)

    for j in range(n + 1):
        if j > 0:
            incoming = lattice.incoming[j]
            dist = predecessor_dist(
                incoming, [scores[e] for e in incoming], [masses[e.src] for e in incoming]
            )
            masses[j] = dist.log_mass
            preds[j] = dist
            if j < n:
                states[j] = combine_states(mode, dist, [locals_[e] for e in incoming], tau, rng)
        if j < n:
            outgoing = lattice.outgoing[j]
            for e, s in zip(outgoing, run.outgoing_scores(states[j], outgoing)):
                scores[e] = s
            for e in outgoing:
                locals_[e] = run.advance(states[j], e)

    return ForwardResult(
        lattice=lattice,
        mode=mode,
        log_mass=masses,
        edge_logprob=scores,
        predecessors=preds,
        cell_steps=run.cell_steps - base_steps,
    )


def brute_force_logprob(lattice: Lattice, run, cap: int = 1_000_000) -> float:
    """Sentence log-probability by explicit enumeration: every segmentation
    scored separately along its own path, then log-sum-exp'd. Exact for any
    model, tractable only on small lattices."""
    path_lps = []
    for path in enumerate_paths(lattice, cap):
        state = run.initial_state()
        total = 0.0
        for e in path.edges:
            total += run.outgoing_scores(state, [e])[0].item()
            state = run.advance(state, e)
        path_lps.append(total)
    return float(np.logaddexp.reduce(path_lps))


def sequential_logprob(tokens: Sequence[int], run) -> float:
    """Plain left-to-right log-probability, no lattice machinery."""
    state = run.initial_state()
    total = 0.0
    for i, tok in enumerate(tokens):
        edge = Edge(i, i + 1, (tok,))
        total += run.outgoing_scores(state, [edge])[0].item()
        state = run.advance(state, edge)
    return total


def edge_posteriors(result: ForwardResult) -> dict[Edge, float]:
    """p(edge on the segmentation path | sentence), by a backward sweep."""
    lattice = result.lattice
    n = lattice.n_tokens
    alpha = np.array([m.item() for m in result.log_mass])
    lp = {e: t.item() for e, t in result.edge_logprob.items()}
    beta = np.full(n + 1, -np.inf)
    beta[n] = 0.0
    for j in range(n - 1, -1, -1):
        beta[j] = np.logaddexp.reduce([lp[e] + beta[e.dst] for e in lattice.outgoing[j]])
    total = alpha[n]
    return {e: math.exp(alpha[e.src] + lp[e] + beta[e.dst] - total) for e in lattice.edges}


def greedy_segmentation(lattice: Lattice, posteriors: dict[Edge, float]) -> SegPath:
    """Follow the highest-posterior outgoing edge from each node reached.

    Exact ties go to the shorter span, then the lower embedding index.
    """
    edges = []
    node = 0
    while node < lattice.n_tokens:
        best = None
        best_p = -1.0
        for e in sorted(lattice.outgoing[node], key=lambda e: (e.length, e.emb_index)):
            p = posteriors[e]
            if p > best_p:
                best, best_p = e, p
        edges.append(best)
        node = best.dst
    return SegPath(tuple(edges))


def sense_posteriors(result: ForwardResult) -> list[np.ndarray]:
    """Per position, the posterior over embedding senses (multilattices only)."""
    lattice = result.lattice
    if not lattice.multi:
        raise ValueError("sense posteriors need a multilattice")
    post = edge_posteriors(result)
    out = []
    for t in range(lattice.n_tokens):
        edges = sorted(lattice.incoming[t + 1], key=lambda e: e.emb_index)
        out.append(np.array([post[e] for e in edges]))
    return out
