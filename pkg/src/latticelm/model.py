"""Full models: parameter tables, recurrent stacks, and heads wired into a
per-sentence run object that the lattice engine drives.

A run owns the sentence-level dropout masks and a carrier cache; the engine
only ever calls ``initial_state``, ``outgoing_scores`` and ``advance``, so
any object with those three methods (for instance a fixed-probability test
head) can stand in for a neural model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import BiLstmComposer, CoupledLstmCell, LstmStack, glorot, variational_dropout_mask
from .heads import DropoutMasks, SenseHead, SentinelHead
from .lattice import Edge
from .tensor import Tensor, mul
from .vocab import ChunkVocab, TokenVocab, chunk_embedding


@dataclass
class ModelConfig:
    kind: str = "chunk"  # "chunk" (span lattice) or "sense" (multilattice)
    embed_dim: int = 64
    hidden_dim: int = 64
    layers: int = 2
    max_chunk_len: int = 1
    n_senses: int = 1

    def validate(self) -> None:
        if self.kind not in ("chunk", "sense"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "chunk":
            if self.embed_dim % 2:
                raise ValueError("embed_dim must be even (two composer directions)")
            if self.n_senses != 1:
                raise ValueError("multi-sense embeddings require the sense model")
        else:
            if self.max_chunk_len != 1:
                raise ValueError("multi-token chunks require the chunk model")
            if self.embed_dim // self.n_senses < 1:
                raise ValueError("embed_dim too small for the sense count")


class _Run:
    """One sentence's view of a model: fixed dropout masks, cached carriers."""

    def __init__(self, model, masks: DropoutMasks | None):
        self.model = model
        self.masks = masks
        self._carriers: dict = {}

    @property
    def cell_steps(self) -> int:
        return self.model.stack.step_count

    def _in_masks(self):
        return self.masks.main_in if self.masks is not None else None

    def initial_state(self):
        model = self.model
        return model.stack.step(model.bos_carrier, model.stack.zero_state(), self._in_masks())

    def advance(self, state, edge: Edge):
        key = (edge.tokens, edge.emb_index)
        x = self._carriers.get(key)
        if x is None:
            x = self._carrier(edge)
            self._carriers[key] = x
        return self.model.stack.step(x, state, self._in_masks())

    def outgoing_scores(self, state, edges: list[Edge]) -> list[Tensor]:
        hidden = state[-1][0]
        if self.masks is not None and self.masks.main_out is not None:
            hidden = mul(hidden, self.masks.main_out)
        return self._score(hidden, edges)


class _ChunkRun(_Run):
    def _carrier(self, edge: Edge) -> Tensor:
        model = self.model
        return chunk_embedding(
            edge.tokens, model.chunk_vocab, model.token_table, model.chunk_table, model.composer
        ).carrier

    def _score(self, hidden: Tensor, edges: list[Edge]) -> list[Tensor]:
        return self.model.head.score_chunks(hidden, [e.tokens for e in edges], self.masks)


class _SenseRun(_Run):
    def _carrier(self, edge: Edge) -> Tensor:
        from .tensor import gather_row

        row = self.model.head.row_of(edge.tokens[0], edge.emb_index)
        return gather_row(self.model.sense_table, row)

    def _score(self, hidden: Tensor, edges: list[Edge]) -> list[Tensor]:
        head = self.model.head
        return head.score_rows(hidden, [head.row_of(e.tokens[0], e.emb_index) for e in edges])


class _BaseModel:
    config: ModelConfig
    params: dict[str, Tensor]

    def __getattr__(self, name):
        try:
            return self.__dict__["params"][name]
        except KeyError:
            raise AttributeError(name) from None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {name: p.grad for name, p in self.params.items()}

    def _register(self, **named: Tensor) -> None:
        for name, t in named.items():
            t.requires_grad = True
            self.params[name] = t

    def _draw_masks(self, dropout: float, rng: np.random.Generator) -> DropoutMasks | None:
        if dropout <= 0.0:
            return None
        if rng is None:
            raise ValueError("dropout requires an rng")
        cfg = self.config
        dims = [self.carrier_dim] + [cfg.hidden_dim] * (cfg.layers - 1)
        masks = DropoutMasks(
            main_in=[Tensor(variational_dropout_mask(d, dropout, rng)) for d in dims],
            main_out=Tensor(variational_dropout_mask(cfg.hidden_dim, dropout, rng)),
        )
        if cfg.kind == "chunk":
            masks.sub_in = Tensor(variational_dropout_mask(cfg.embed_dim, dropout, rng))
            masks.sub_out = Tensor(variational_dropout_mask(cfg.hidden_dim, dropout, rng))
        return masks


class ChunkLatticeModel(_BaseModel):
    """Span-lattice language model with the sentinel mixture head."""

    kind = "chunk"

    def __init__(self, config: ModelConfig, token_vocab: TokenVocab, chunk_vocab: ChunkVocab,
                 rng: np.random.Generator):
        config.validate()
        if config.max_chunk_len != chunk_vocab.max_len:
            raise ValueError("config chunk length disagrees with the chunk vocabulary")
        self.config = config
        self.token_vocab = token_vocab
        self.chunk_vocab = chunk_vocab
        self.params = {}
        d, h = config.embed_dim, config.hidden_dim
        n_tok = len(token_vocab)
        n_chunk = len(chunk_vocab)
        self.carrier_dim = 2 * d

        # final table rows: end-of-chunk symbol / sentinel (output side only)
        self._register(token_table=Tensor(glorot((n_tok + 1, d), rng)))
        self._register(chunk_table=Tensor(glorot((n_chunk + 1, d), rng)))
        self.composer = BiLstmComposer.create(d, d // 2, rng)
        self.params.update(self.composer.named_params("composer"))
        self.stack = LstmStack.create(2 * d, h, config.layers, rng)
        self.params.update(self.stack.named_params("main"))
        self._register(bos_carrier=Tensor(glorot((2 * d,), rng)))
        self._register(out_proj=Tensor(glorot((d, h), rng)))
        self._register(out_bias=Tensor(np.zeros(n_chunk + 1)))
        self._register(sub_init=Tensor(glorot((h, h), rng)))
        self.sub_cell = CoupledLstmCell.create(d, h, rng)
        self.params.update(self.sub_cell.named_params("sub"))
        self._register(sub_proj=Tensor(glorot((d, h), rng)))
        self._register(sub_bias=Tensor(np.zeros(n_tok + 1)))

        self.head = SentinelHead(
            chunk_vocab,
            self.chunk_table,
            self.out_bias,
            self.out_proj,
            self.sub_cell,
            self.sub_init,
            self.token_table,
            self.sub_bias,
            self.sub_proj,
        )

    def start_run(self, train: bool = False, rng: np.random.Generator | None = None,
                  dropout: float = 0.0) -> _ChunkRun:
        return _ChunkRun(self, self._draw_masks(dropout, rng) if train else None)


class MultiSenseModel(_BaseModel):
    """Multilattice language model with several embeddings per token."""

    kind = "sense"

    def __init__(self, config: ModelConfig, token_vocab: TokenVocab, rng: np.random.Generator):
        config.validate()
        if config.kind != "sense":
            raise ValueError("MultiSenseModel needs kind='sense'")
        self.config = config
        self.token_vocab = token_vocab
        self.params = {}
        h = config.hidden_dim
        d_sense = config.embed_dim // config.n_senses
        self.carrier_dim = d_sense
        n_rows = (len(token_vocab) - 1) * config.n_senses + 1

        self._register(sense_table=Tensor(glorot((n_rows, d_sense), rng)))
        self.stack = LstmStack.create(d_sense, h, config.layers, rng)
        self.params.update(self.stack.named_params("main"))
        self._register(bos_carrier=Tensor(glorot((d_sense,), rng)))
        self._register(out_proj=Tensor(glorot((d_sense, h), rng)))
        self._register(out_bias=Tensor(np.zeros(n_rows)))

        self.head = SenseHead(token_vocab, self.sense_table, self.out_bias, self.out_proj,
                              config.n_senses)

    def start_run(self, train: bool = False, rng: np.random.Generator | None = None,
                  dropout: float = 0.0) -> _SenseRun:
        return _SenseRun(self, self._draw_masks(dropout, rng) if train else None)


def build_model(
    config: ModelConfig,
    token_vocab: TokenVocab,
    chunk_vocab: ChunkVocab | None = None,
    seed: int | np.random.Generator = 0,
):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if config.kind == "chunk":
        if chunk_vocab is None:
            raise ValueError("chunk model needs a chunk vocabulary")
        return ChunkLatticeModel(config, token_vocab, chunk_vocab, rng)
    return MultiSenseModel(config, token_vocab, rng)
