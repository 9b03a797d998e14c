"""Shared test fixtures: fixed-probability heads and tiny model builders."""

import numpy as np

from latticelm import tensor as T
from latticelm.model import ModelConfig, build_model
from latticelm.vocab import build_chunk_vocab, preprocess


class FixedHead:
    """History-independent run: each edge's log-score depends only on the
    edge's content, never on the state. Forward marginalization must then
    agree exactly with brute-force path enumeration, whatever the mode."""

    def __init__(self, seed: int):
        self.seed = seed
        self._cache: dict = {}
        self.cell_steps = 0

    def _score(self, edge) -> float:
        key = (edge.tokens, edge.emb_index)
        if key not in self._cache:
            rng = np.random.default_rng((self.seed, edge.emb_index, *edge.tokens))
            self._cache[key] = -rng.exponential(1.5)
        return self._cache[key]

    def initial_state(self):
        return []

    def outgoing_scores(self, state, edges):
        return [T.constant(self._score(e)) for e in edges]

    def advance(self, state, edge):
        return []


def tiny_text(kind: str = "plain") -> list[str]:
    if kind == "plain":
        return ["a b c a b", "b c a", "a b a b c", "c c a b", "b a c"]
    raise ValueError(kind)


def tiny_chunk_model(embed=8, hidden=6, layers=2, max_len=2, budget=4, seed=0,
                     lines=None, vocab_size=10):
    corpus, vocab = preprocess(lines or tiny_text(), vocab_size=vocab_size, max_length=50)
    chunks = build_chunk_vocab(corpus, vocab, budget=budget, max_len=max_len)
    cfg = ModelConfig(kind="chunk", embed_dim=embed, hidden_dim=hidden, layers=layers,
                      max_chunk_len=max_len)
    model = build_model(cfg, vocab, chunks, seed=seed)
    return model, corpus


def tiny_sense_model(embed=8, hidden=6, layers=2, n_senses=2, seed=0, lines=None,
                     vocab_size=10):
    corpus, vocab = preprocess(lines or tiny_text(), vocab_size=vocab_size, max_length=50)
    cfg = ModelConfig(kind="sense", embed_dim=embed, hidden_dim=hidden, layers=layers,
                      n_senses=n_senses)
    model = build_model(cfg, vocab, seed=seed)
    return model, corpus
