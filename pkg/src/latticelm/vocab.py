"""Token and chunk vocabularies plus corpus preprocessing.

Reserved surfaces occupy the first four token ids in a fixed order:
unknown, number, end-of-sentence, sentinel. Chunk vocabularies hold every
unit token plus the most frequent multi-token n-grams up to a length cap.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .tensor import Tensor, concat, gather_row

UNK_TOKEN = "<unk>"
NUM_TOKEN = "<N>"
EOS_TOKEN = "<eos>"
SENTINEL_TOKEN = "<s>"
RESERVED = (UNK_TOKEN, NUM_TOKEN, EOS_TOKEN, SENTINEL_TOKEN)

_DIGIT_RUN = re.compile(r"\d+")

Chunk = tuple[int, ...]


class TokenVocab:
    """Surfaces with frequency counts, ordered by id."""

    unk_id = 0
    num_id = 1
    eos_id = 2
    sentinel_id = 3

    def __init__(self, surfaces: Sequence[str], counts: Sequence[int]):
        if tuple(surfaces[:4]) != RESERVED:
            raise ValueError(f"vocabulary must start with the reserved surfaces {RESERVED}")
        if len(surfaces) != len(counts):
            raise ValueError("surfaces and counts must align")
        self.surfaces = list(surfaces)
        self.counts = list(counts)
        self.index = {s: i for i, s in enumerate(self.surfaces)}
        if len(self.index) != len(self.surfaces):
            raise ValueError("duplicate surface in vocabulary")

    def __len__(self) -> int:
        return len(self.surfaces)

    def id_of(self, surface: str) -> int:
        return self.index.get(surface, self.unk_id)

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for surface, count in zip(self.surfaces, self.counts):
                fh.write(f"{surface}\t{count}\n")

    @classmethod
    def load(cls, path: str | Path) -> "TokenVocab":
        surfaces, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                surface, _, count = line.partition("\t")
                surfaces.append(surface)
                counts.append(int(count))
        return cls(surfaces, counts)


def tokenize(line: str, mode: str) -> list[str]:
    """Lowercase and split one raw line; digit runs collapse to the number
    token. Word mode splits on whitespace, character mode on code points
    (whitespace dropped)."""
    line = line.lower()
    if mode == "word":
        return [_DIGIT_RUN.sub(NUM_TOKEN, w) for w in line.split()]
    if mode == "char":
        out: list[str] = []
        in_digits = False
        for ch in line:
            if ch.isspace():
                in_digits = False
                continue
            if ch.isdigit():
                if not in_digits:
                    out.append(NUM_TOKEN)
                in_digits = True
            else:
                out.append(ch)
                in_digits = False
        return out
    raise ValueError(f"unknown tokenization mode: {mode!r}")


def preprocess(
    lines: Iterable[str],
    vocab_size: int,
    max_length: int,
    mode: str = "word",
) -> tuple[list[list[int]], TokenVocab]:
    """Tokenize a raw corpus, build the frequency-ranked vocabulary, and
    encode every kept sentence with an end-of-sentence id appended.

    ``vocab_size`` counts the reserved surfaces; sentences longer than
    ``max_length`` tokens (before the end marker) are dropped.
    """
    if vocab_size < len(RESERVED):
        raise ValueError(f"vocab_size must be at least {len(RESERVED)}")
    sentences = []
    for line in lines:
        toks = tokenize(line, mode)
        if toks and len(toks) <= max_length:
            sentences.append(toks)
    if not sentences:
        raise ValueError("empty corpus after length filtering")

    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    position = 0
    for sent in sentences:
        for tok in sent:
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = position
                position += 1

    candidates = [s for s in counts if s not in RESERVED]
    candidates.sort(key=lambda s: (-counts[s], first_seen[s]))
    kept = candidates[: vocab_size - len(RESERVED)]

    surfaces = list(RESERVED) + kept
    vocab_counts = [0, 0, 0, 0] + [counts[s] for s in kept]
    dropped = set(candidates[vocab_size - len(RESERVED) :])
    vocab_counts[TokenVocab.unk_id] = counts.get(UNK_TOKEN, 0) + sum(counts[s] for s in dropped)
    vocab_counts[TokenVocab.num_id] = counts.get(NUM_TOKEN, 0)
    vocab_counts[TokenVocab.eos_id] = len(sentences)
    vocab = TokenVocab(surfaces, vocab_counts)

    corpus = [[vocab.id_of(t) for t in sent] + [vocab.eos_id] for sent in sentences]
    return corpus, vocab


def encode_corpus(
    lines: Iterable[str],
    vocab: TokenVocab,
    max_length: int,
    mode: str = "word",
) -> list[list[int]]:
    """Encode raw text against an existing vocabulary (evaluation path)."""
    corpus = []
    for line in lines:
        toks = tokenize(line, mode)
        if toks and len(toks) <= max_length:
            corpus.append([vocab.id_of(t) for t in toks] + [vocab.eos_id])
    return corpus


class ChunkVocab:
    """Unit tokens plus budgeted multi-token n-grams, each mapped to an id.

    Unit chunks come first in token-id order, so chunk id k < |V| is the
    chunk (k,). Multi-token chunks never contain the end-of-sentence token.
    """

    def __init__(self, chunks: Sequence[Chunk], token_vocab: TokenVocab, max_len: int):
        self.chunks = [tuple(c) for c in chunks]
        self.token_vocab = token_vocab
        self.max_len = max_len
        self.index: dict[Chunk, int] = {c: i for i, c in enumerate(self.chunks)}
        if len(self.index) != len(self.chunks):
            raise ValueError("duplicate chunk")
        for c in self.chunks:
            if not 1 <= len(c) <= max_len:
                raise ValueError(f"chunk length {len(c)} outside [1, {max_len}]")

    def __len__(self) -> int:
        return len(self.chunks)

    def id_of(self, chunk: Chunk) -> int | None:
        return self.index.get(tuple(chunk))

    def chunk(self, chunk_id: int) -> Chunk:
        return self.chunks[chunk_id]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for chunk in self.chunks:
                fh.write(" ".join(str(t) for t in chunk) + "\n")

    @classmethod
    def load(cls, path: str | Path, token_vocab: TokenVocab, max_len: int) -> "ChunkVocab":
        chunks = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    chunks.append(tuple(int(t) for t in line.split()))
        return cls(chunks, token_vocab, max_len)


def build_chunk_vocab(
    corpus: Sequence[Sequence[int]],
    token_vocab: TokenVocab,
    budget: int,
    max_len: int,
) -> ChunkVocab:
    """Every unit token, then the ``budget`` most frequent n-grams with
    1 < n <= max_len. Frequency ties break toward earlier first occurrence.
    N-grams never cross sentence ends and never contain the end marker."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    chunks: list[Chunk] = [(v,) for v in range(len(token_vocab))]
    if max_len > 1 and budget > 0:
        counts: Counter[Chunk] = Counter()
        first_seen: dict[Chunk, int] = {}
        position = 0
        eos = token_vocab.eos_id
        for sent in corpus:
            for n in range(2, max_len + 1):
                for i in range(len(sent) - n + 1):
                    gram = tuple(sent[i : i + n])
                    if eos in gram:
                        continue
                    counts[gram] += 1
                    if gram not in first_seen:
                        first_seen[gram] = position
                        position += 1
        ranked = sorted(counts, key=lambda g: (-counts[g], first_seen[g]))
        chunks.extend(ranked[:budget])
    return ChunkVocab(chunks, token_vocab, max_len)


@dataclass
class ChunkEmbedding:
    """Compositional half, non-compositional half, and their concatenation."""

    compositional: Tensor
    non_compositional: Tensor
    carrier: Tensor


def chunk_embedding(
    chunk: Chunk,
    chunk_vocab: ChunkVocab,
    token_table: Tensor,
    chunk_table: Tensor,
    composer,
) -> ChunkEmbedding:
    """Composed token reading concatenated with the chunk's own table row.

    Chunks outside the vocabulary fall back to the unknown token's unit row
    for the non-compositional half; the compositional half always sees the
    actual tokens.
    """
    n_tokens = len(chunk_vocab.token_vocab)
    for t in chunk:
        if not 0 <= t < n_tokens:
            raise IndexError(f"token id {t} out of range")
    comp = composer.compose([gather_row(token_table, t) for t in chunk])
    cid = chunk_vocab.id_of(chunk)
    if cid is None:
        cid = chunk_vocab.token_vocab.unk_id  # unit chunks sit at their token id
    noncomp = gather_row(chunk_table, cid)
    return ChunkEmbedding(comp, noncomp, concat([comp, noncomp]))
