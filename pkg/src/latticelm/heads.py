"""Output distributions over lattice edges.

The sentinel head mixes a closed softmax over the chunk vocabulary with a
character/token-level generator: any probability assigned to the sentinel
row is redistributed over all token strings by a single-layer sub-LSTM, so
the head covers every chunk up to the length cap, in or out of vocabulary.

The sense head scores (token, embedding) pairs for multilattices with one
tied softmax over all sense rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cells import CoupledLstmCell, tied_output_logits
from .tensor import (
    Tensor,
    add,
    gather_row,
    log_softmax,
    logaddexp,
    matvec,
    mul,
    pick,
    slice_vec,
)
from .vocab import Chunk, ChunkVocab, TokenVocab


@dataclass
class DropoutMasks:
    """Per-sentence keep-masks; None fields mean no dropout at that site."""

    main_in: list[Tensor] | None = None
    main_out: Tensor | None = None
    sub_in: Tensor | None = None
    sub_out: Tensor | None = None


class SentinelHead:
    """Mixture of a chunk softmax and a sentinel-gated sub-LSTM generator.

    The chunk table's final row is the sentinel; the token table's final row
    is the end-of-chunk symbol, present only on the sub-LSTM's output side.
    """

    def __init__(
        self,
        chunk_vocab: ChunkVocab,
        chunk_table: Tensor,
        out_bias: Tensor,
        out_proj: Tensor,
        sub_cell: CoupledLstmCell,
        sub_init: Tensor,
        token_table: Tensor,
        sub_bias: Tensor,
        sub_proj: Tensor,
    ):
        self.chunk_vocab = chunk_vocab
        self.chunk_table = chunk_table
        self.out_bias = out_bias
        self.out_proj = out_proj
        self.sub_cell = sub_cell
        self.sub_init = sub_init
        self.token_table = token_table
        self.sub_bias = sub_bias
        self.sub_proj = sub_proj
        self.sentinel_id = len(chunk_vocab)
        self.end_id = len(chunk_vocab.token_vocab)
        self._sub_zero = Tensor(np.zeros(sub_cell.hidden_dim))

    def main_chunk_dist(self, hidden: Tensor) -> Tensor:
        """Log probabilities over chunk vocab plus the sentinel row."""
        return log_softmax(tied_output_logits(hidden, self.chunk_table, self.out_bias, self.out_proj))

    def sub_prefix_logprobs(
        self, hidden: Tensor, tokens: Chunk, masks: DropoutMasks | None = None
    ) -> list[Tensor]:
        """Sub-LSTM log probability of each non-empty prefix of ``tokens``.

        The first step's distribution excludes the end symbol (empty chunks
        cannot occur), and generation ends with probability one once the
        length cap is reached; the result is a proper distribution over all
        chunks of length 1..cap by construction.
        """
        cap = self.chunk_vocab.max_len
        if not 1 <= len(tokens) <= cap:
            raise ValueError(f"chunk length {len(tokens)} outside [1, {cap}]")
        n_tok = self.end_id

        def dist_from(h: Tensor, first: bool) -> Tensor:
            if masks is not None and masks.sub_out is not None:
                h = mul(h, masks.sub_out)
            logits = tied_output_logits(h, self.token_table, self.sub_bias, self.sub_proj)
            if first:
                return log_softmax(slice_vec(logits, 0, n_tok))
            return log_softmax(logits)

        h = matvec(self.sub_init, hidden)
        c = self._sub_zero
        dist = dist_from(h, first=True)
        results: list[Tensor] = []
        acc: Tensor | None = None
        for consumed, tok in enumerate(tokens, start=1):
            step_lp = pick(dist, tok)
            acc = step_lp if acc is None else add(acc, step_lp)
            if consumed == cap:
                results.append(acc)  # the cap forces the end symbol
                break
            x = gather_row(self.token_table, tok)
            if masks is not None and masks.sub_in is not None:
                x = mul(x, masks.sub_in)
            h, c = self.sub_cell.step(x, h, c)
            dist = dist_from(h, first=False)
            results.append(add(acc, pick(dist, self.end_id)))
        return results

    def sub_chunk_logprob(self, hidden: Tensor, tokens: Chunk, masks: DropoutMasks | None = None) -> Tensor:
        return self.sub_prefix_logprobs(hidden, tokens, masks)[-1]

    def score_chunks(
        self, hidden: Tensor, chunks: Sequence[Chunk], masks: DropoutMasks | None = None
    ) -> list[Tensor]:
        """Log probability of each chunk, sharing one sub-LSTM sweep.

        The chunks must be prefix-nested (as the spans leaving one lattice
        node always are); out-of-vocabulary chunks get only the sub route.
        """
        longest = max(chunks, key=len)
        for c in chunks:
            if tuple(c) != tuple(longest[: len(c)]):
                raise ValueError("chunks leaving one node must be prefix-nested")
        main_lp = self.main_chunk_dist(hidden)
        sub_lps = self.sub_prefix_logprobs(hidden, tuple(longest), masks)
        gate = pick(main_lp, self.sentinel_id)
        out = []
        for c in chunks:
            sub_route = add(gate, sub_lps[len(c) - 1])
            cid = self.chunk_vocab.id_of(c)
            out.append(sub_route if cid is None else logaddexp(pick(main_lp, cid), sub_route))
        return out

    def chunk_logprob(self, hidden: Tensor, tokens: Chunk, masks: DropoutMasks | None = None) -> Tensor:
        return self.score_chunks(hidden, [tuple(tokens)], masks)[0]


class SenseHead:
    """Tied softmax over (token, sense) rows.

    Every token except the end marker owns ``n_senses`` consecutive rows;
    the end marker keeps exactly one, the table's last row.
    """

    def __init__(
        self,
        token_vocab: TokenVocab,
        sense_table: Tensor,
        out_bias: Tensor,
        out_proj: Tensor,
        n_senses: int,
    ):
        self.token_vocab = token_vocab
        self.sense_table = sense_table
        self.out_bias = out_bias
        self.out_proj = out_proj
        self.n_senses = n_senses
        n_tokens = len(token_vocab)
        rows = np.full((n_tokens, n_senses), -1, dtype=np.int64)
        r = 0
        for v in range(n_tokens):
            if v == token_vocab.eos_id:
                continue
            rows[v] = np.arange(r, r + n_senses)
            r += n_senses
        rows[token_vocab.eos_id, 0] = r
        self.n_rows = r + 1
        if sense_table.data.shape[0] != self.n_rows:
            raise ValueError(f"sense table needs {self.n_rows} rows, got {sense_table.data.shape[0]}")
        self._rows = rows

    def row_of(self, token: int, sense: int) -> int:
        row = int(self._rows[token, sense])
        if row < 0:
            raise ValueError(f"token {token} has no sense {sense}")
        return row

    def sense_dist(self, hidden: Tensor) -> Tensor:
        """Log probabilities over every (token, sense) row."""
        return log_softmax(tied_output_logits(hidden, self.sense_table, self.out_bias, self.out_proj))

    def score_rows(self, hidden: Tensor, rows: Sequence[int]) -> list[Tensor]:
        dist = self.sense_dist(hidden)
        return [pick(dist, r) for r in rows]

    def token_marginals(self, hidden: Tensor) -> np.ndarray:
        """p(token) = sum over its senses, computed outside any graph."""
        p = np.exp(self.sense_dist(hidden).data)
        out = np.zeros(len(self.token_vocab))
        for v in range(len(self.token_vocab)):
            for k in range(self.n_senses):
                if self._rows[v, k] >= 0:
                    out[v] += p[self._rows[v, k]]
        return out
