"""Segmentation lattices over a token sequence.

Nodes are the |X|+1 positions between tokens; node 0 precedes everything
and node |X| follows the final token. Every edge consumes a contiguous
token span (dense chunk lattices) or a single token under one of several
embedding senses (multilattices).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    tokens: tuple[int, ...]
    emb_index: int = 0

    @property
    def length(self) -> int:
        return self.dst - self.src


@dataclass(frozen=True)
class SegPath:
    """One full route from node 0 to the final node."""

    edges: tuple[Edge, ...]

    @property
    def boundaries(self) -> tuple[int, ...]:
        return (0,) + tuple(e.dst for e in self.edges)

    def __len__(self) -> int:
        return len(self.edges)


class Lattice:
    def __init__(self, n_tokens: int, edges: Sequence[Edge], multi: bool = False):
        if n_tokens < 1:
            raise ValueError("lattice needs at least one token")
        self.n_tokens = n_tokens
        self.n_nodes = n_tokens + 1
        self.edges = list(edges)
        self.multi = multi
        self.incoming: list[list[Edge]] = [[] for _ in range(self.n_nodes)]
        self.outgoing: list[list[Edge]] = [[] for _ in range(self.n_nodes)]
        for e in self.edges:
            if not 0 <= e.src < e.dst <= n_tokens:
                raise ValueError(f"edge span [{e.src}, {e.dst}) out of bounds")
            self.incoming[e.dst].append(e)
            self.outgoing[e.src].append(e)
        for j in range(1, self.n_nodes):
            if not self.incoming[j]:
                raise ValueError(f"node {j} is unreachable")
        self.max_in_degree = max(len(self.incoming[j]) for j in range(1, self.n_nodes))


def build_single_path(tokens: Sequence[int]) -> Lattice:
    """One unigram edge per token: exactly one segmentation."""
    toks = list(tokens)
    edges = [Edge(i, i + 1, (t,)) for i, t in enumerate(toks)]
    return Lattice(len(toks), edges)


def build_dense(tokens: Sequence[int], max_len: int, eos_id: int | None = None) -> Lattice:
    """All spans up to ``max_len`` tokens.

    When ``eos_id`` is given and ends the sequence, no multi-token span may
    cover that final position: the end marker is always its own chunk.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    toks = list(tokens)
    n = len(toks)
    protect_final = eos_id is not None and n > 0 and toks[-1] == eos_id
    edges = []
    for i in range(n):
        for j in range(i + 1, min(i + max_len, n) + 1):
            if protect_final and j == n and j - i > 1:
                continue
            edges.append(Edge(i, j, tuple(toks[i:j])))
    return Lattice(n, edges)


def build_multilattice(tokens: Sequence[int], n_senses: int, eos_id: int | None = None) -> Lattice:
    """``n_senses`` parallel unigram edges per position; the end marker
    (when given) keeps a single sense."""
    if n_senses < 1:
        raise ValueError("n_senses must be >= 1")
    toks = list(tokens)
    edges = []
    for i, t in enumerate(toks):
        if eos_id is not None and t == eos_id and i == len(toks) - 1:
            edges.append(Edge(i, i + 1, (t,), 0))
        else:
            edges.extend(Edge(i, i + 1, (t,), k) for k in range(n_senses))
    return Lattice(len(toks), edges, multi=True)


def path_count(lattice: Lattice) -> int:
    counts = [0] * lattice.n_nodes
    counts[0] = 1
    for j in range(1, lattice.n_nodes):
        counts[j] = sum(counts[e.src] for e in lattice.incoming[j])
    return counts[-1]


def enumerate_paths(lattice: Lattice, cap: int = 1_000_000) -> list[SegPath]:
    """Every route from node 0 to the final node, depth-first in edge order.

    Refuses lattices whose path count exceeds ``cap``.
    """
    total = path_count(lattice)
    if total > cap:
        raise ValueError(f"path count {total} exceeds enumeration cap {cap}")
    paths: list[SegPath] = []
    stack: list[Edge] = []

    def walk(node: int) -> None:
        if node == lattice.n_tokens:
            paths.append(SegPath(tuple(stack)))
            return
        for e in lattice.outgoing[node]:
            stack.append(e)
            walk(e.dst)
            stack.pop()

    walk(0)
    return paths
