"""Batched training and perplexity evaluation.

Sentences are bucketed by length so each batch shares one lattice shape.
The batch objective is the mean per-sentence negative log-likelihood; Adam
consumes globally norm-clipped gradients. Evaluation always runs without
dropout, and the sampling modes evaluate with marginal weights so reported
perplexities are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cells import AdamState, adam_update, clip_gradients
from .inference import (
    ApproxMode,
    GumbelSchedule,
    edge_posteriors,
    forward_marginalize,
    greedy_segmentation,
)
from .lattice import Lattice, build_dense, build_multilattice
from .tensor import Graph, scale, stack, vsum


class TrainingDiverged(RuntimeError):
    """Raised when a loss stops being finite; training must not continue."""


@dataclass
class TrainConfig:
    max_chunk_len: int = 1
    n_senses: int = 1
    mode: str = "marginal"
    lr: float = 0.01
    batch_size: int = 16
    epochs: int = 5
    dropout: float = 0.0
    tau0: float = 5.0
    tau_min: float = 0.5
    tau_decay: float = 0.9995
    seed: int = 0
    clip: float = 5.0


@dataclass
class SentenceEval:
    tokens: list[int]
    logprob: float


@dataclass
class EvalReport:
    total_logprob: float
    token_count: int
    perplexity: float
    sentences: list[SentenceEval]
    segment_length_hist: dict[int, int] | None = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_perplexity: float
    tau: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_perplexity: float = math.inf


def lattice_for(tokens, model) -> Lattice:
    eos = model.token_vocab.eos_id
    if model.kind == "chunk":
        return build_dense(tokens, model.config.max_chunk_len, eos_id=eos)
    return build_multilattice(tokens, model.config.n_senses, eos_id=eos)


def eval_mode_for(mode: str | ApproxMode) -> ApproxMode:
    """Sampling modes report deterministic perplexity via marginal weights."""
    mode = ApproxMode.parse(mode)
    if mode in (ApproxMode.MONTE_CARLO, ApproxMode.GUMBEL):
        return ApproxMode.MARGINAL
    return mode


def evaluate_perplexity(
    corpus,
    model,
    mode: str | ApproxMode = ApproxMode.MARGINAL,
    collect_segments: int = 0,
) -> EvalReport:
    """Perplexity over a corpus, per unit token including the end marker.

    The token count is lattice-independent, so figures are comparable
    across chunk caps and sense counts.
    """
    if not corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    mode = eval_mode_for(mode)
    total = 0.0
    count = 0
    sentences = []
    hist: dict[int, int] = {}
    want_hist = collect_segments > 0 and model.kind == "chunk" and model.config.max_chunk_len > 1
    for idx, tokens in enumerate(corpus):
        run = model.start_run(train=False)
        result = forward_marginalize(lattice_for(tokens, model), run, mode)
        lp = result.value
        if not math.isfinite(lp):
            raise ValueError(f"non-finite log-probability on sentence {idx}")
        total += lp
        count += len(tokens)
        sentences.append(SentenceEval(list(tokens), lp))
        if want_hist and idx < collect_segments:
            path = greedy_segmentation(result.lattice, edge_posteriors(result))
            for e in path.edges:
                hist[e.length] = hist.get(e.length, 0) + 1
    perplexity = math.exp(-total / count)
    return EvalReport(total, count, perplexity, sentences, hist if want_hist else None)


def _batches(corpus, batch_size: int, rng: np.random.Generator) -> list[list[list[int]]]:
    buckets: dict[int, list[int]] = {}
    for i, sent in enumerate(corpus):
        buckets.setdefault(len(sent), []).append(i)
    batches = []
    for length in sorted(buckets):
        ids = np.array(buckets[length])
        rng.shuffle(ids)
        for start in range(0, len(ids), batch_size):
            batches.append([corpus[i] for i in ids[start : start + batch_size]])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train(
    model,
    train_corpus,
    valid_corpus,
    cfg: TrainConfig,
    log_path=None,
) -> TrainLog:
    """Adam training with per-epoch validation; the best-validation
    parameters are restored into the model before returning."""
    if cfg.max_chunk_len != model.config.max_chunk_len or cfg.n_senses != model.config.n_senses:
        raise ValueError("training lattice shape disagrees with the model")
    if not train_corpus:
        raise ValueError("empty training corpus")
    mode = ApproxMode.parse(cfg.mode)
    schedule = GumbelSchedule(cfg.tau0, cfg.tau_min, cfg.tau_decay)
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState(lr=cfg.lr)
    log = TrainLog()
    best_params: dict[str, np.ndarray] | None = None
    batch_index = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            loss_sum = 0.0
            n_sentences = 0
            tau = schedule.tau_at(batch_index)
            for batch in _batches(train_corpus, cfg.batch_size, rng):
                tau = schedule.tau_at(batch_index)
                with Graph() as graph:
                    losses = []
                    for tokens in batch:
                        run = model.start_run(train=True, rng=rng, dropout=cfg.dropout)
                        result = forward_marginalize(
                            lattice_for(tokens, model), run, mode, tau=tau, rng=rng
                        )
                        nll = scale(result.logprob, -1.0)
                        if not math.isfinite(nll.item()):
                            raise TrainingDiverged(
                                f"epoch {epoch}, batch {batch_index}: non-finite loss "
                                f"on sentence {tokens[:8]}..."
                            )
                        losses.append(nll)
                    batch_loss = scale(vsum(stack(losses)), 1.0 / len(losses))
                    graph.backward(batch_loss)
                clip_gradients(model.params, cfg.clip)
                adam_update(model.params, model.grads(), adam)
                model.zero_grad()
                loss_sum += batch_loss.item() * len(losses)
                n_sentences += len(losses)
                batch_index += 1
            train_loss = loss_sum / n_sentences
            report = evaluate_perplexity(valid_corpus, model, mode, collect_segments=50)
            tau_logged = tau if mode is ApproxMode.GUMBEL else 0.0
            record = EpochRecord(epoch, train_loss, report.perplexity, tau_logged)
            log.records.append(record)
            if log_fh is not None:
                log_fh.write(
                    f"{record.epoch}\t{record.train_loss:.6f}"
                    f"\t{record.valid_perplexity:.6f}\t{record.tau:.6f}\n"
                )
                log_fh.flush()
            if report.perplexity < log.best_perplexity:
                log.best_perplexity = report.perplexity
                log.best_epoch = epoch
                best_params = {name: p.data.copy() for name, p in model.params.items()}
    finally:
        if log_fh is not None:
            log_fh.close()
    if best_params is not None:
        for name, p in model.params.items():
            p.data = best_params[name]
    return log
