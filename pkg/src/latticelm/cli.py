"""Command-line interface.

Subcommands: build-vocab (vocabulary and chunk files), train (fit a model
and write a checkpoint), eval (perplexity report), segment (per-boundary
chunk-length posteriors and the greedy segmentation), senses (per-occurrence
embedding preferences).  Checkpoints carry every hyperparameter, so eval and
the report commands need no redundant flags.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .inference import ApproxMode, edge_posteriors, forward_marginalize, greedy_segmentation, \
    sense_posteriors
from .model import ModelConfig, build_model
from .training import TrainConfig, eval_mode_for, evaluate_perplexity, lattice_for, train
from .vocab import build_chunk_vocab, encode_corpus, preprocess

APPROX_CHOICES = ("direct", "mc", "marginal", "gumbel")


class CliError(Exception):
    """User-facing input or configuration problem; exits with status 1."""


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticelm",
        description="Lattice language models over multi-token chunks or "
                    "multi-embedding tokens.")
    sub = parser.add_subparsers(dest="command", required=True)

    prep = argparse.ArgumentParser(add_help=False)
    prep.add_argument("--mode", choices=("word", "char"), default="word",
                      help="tokenization granularity (default word)")
    prep.add_argument("--vocab-size", type=int, default=10000,
                      help="vocabulary budget including reserved surfaces")
    prep.add_argument("--max-len", type=int, default=50,
                      help="longest sentence kept, in tokens")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--lattice-size", type=int, default=1, metavar="L",
                       help="longest chunk, in tokens (default 1)")
    shape.add_argument("--embeddings-per-token", type=int, default=1, metavar="E",
                       help="embeddings per token (default 1)")
    shape.add_argument("--chunk-vocab-size", type=int, default=1000,
                       help="budget of multi-token chunks")

    p = sub.add_parser("build-vocab", parents=[prep, shape],
                       help="write vocabulary (and chunk) files from a corpus")
    p.add_argument("corpus", help="UTF-8 text, one sentence per line")
    p.add_argument("--vocab-out", required=True, help="vocabulary file to write")
    p.add_argument("--chunks-out", help="chunk file to write (needs L > 1)")

    t = sub.add_parser("train", parents=[prep, shape],
                       help="train a model and write a checkpoint")
    t.add_argument("corpus", help="UTF-8 text, one sentence per line")
    t.add_argument("--checkpoint", required=True, help="checkpoint file to write")
    t.add_argument("--valid", help="held-out text; defaults to every 10th sentence")
    t.add_argument("--metrics", help="tab-separated per-epoch log to write")
    t.add_argument("--approx", choices=APPROX_CHOICES, default="marginal",
                   help="hidden-state approximation (default marginal)")
    t.add_argument("--hidden-dim", type=int, default=64)
    t.add_argument("--embed-dim", type=int, default=64)
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--epochs", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--tau0", type=float, default=5.0)
    t.add_argument("--tau-min", type=float, default=0.5)
    t.add_argument("--tau-decay", type=float, default=0.9995)
    t.add_argument("--clip", type=float, default=5.0)

    e = sub.add_parser("eval", help="print a perplexity report for a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("corpus")
    e.add_argument("--approx", choices=APPROX_CHOICES,
                   help="override the stored approximation")
    e.add_argument("--lattice-size", type=int, metavar="L",
                   help="assert the checkpoint's chunk length")
    e.add_argument("--embeddings-per-token", type=int, metavar="E",
                   help="assert the checkpoint's sense count")

    g = sub.add_parser("segment",
                       help="per-boundary posteriors and greedy segmentation")
    g.add_argument("checkpoint")
    g.add_argument("corpus")
    g.add_argument("--limit", type=int, default=10, help="sentences to report")

    n = sub.add_parser("senses", help="per-occurrence embedding preferences")
    n.add_argument("checkpoint")
    n.add_argument("corpus")
    n.add_argument("--limit", type=int, default=10, help="sentences to report")
    return parser


def _lattice_shape(args) -> tuple[str, int, int]:
    size, senses = args.lattice_size, args.embeddings_per_token
    if size < 1 or senses < 1:
        raise CliError("--lattice-size and --embeddings-per-token must be positive")
    if size > 1 and senses > 1:
        raise CliError("--lattice-size > 1 and --embeddings-per-token > 1 are "
                       "mutually exclusive")
    return ("sense" if senses > 1 else "chunk"), size, senses


def _cmd_build_vocab(args) -> None:
    kind, size, _ = _lattice_shape(args)
    corpus, vocab = preprocess(_read_lines(args.corpus), args.vocab_size,
                               args.max_len, args.mode)
    vocab.save(args.vocab_out)
    print(f"vocabulary: {len(vocab)} surfaces -> {args.vocab_out}")
    if kind == "chunk" and size > 1:
        if not args.chunks_out:
            raise CliError("--lattice-size > 1 needs --chunks-out")
        chunks = build_chunk_vocab(corpus, vocab, args.chunk_vocab_size, size)
        chunks.save(args.chunks_out)
        print(f"chunks: {len(chunks)} entries -> {args.chunks_out}")
    elif args.chunks_out:
        raise CliError("--chunks-out needs --lattice-size > 1")


def _cmd_train(args) -> None:
    kind, size, senses = _lattice_shape(args)
    corpus, vocab = preprocess(_read_lines(args.corpus), args.vocab_size,
                               args.max_len, args.mode)
    if args.valid:
        valid = encode_corpus(_read_lines(args.valid), vocab, args.max_len, args.mode)
        train_corpus = corpus
    else:
        valid = corpus[::10]
        train_corpus = [s for i, s in enumerate(corpus) if i % 10]
    if not valid:
        raise CliError("validation corpus is empty")
    if not train_corpus:
        raise CliError("training corpus is empty after the validation split")

    chunk_vocab = None
    if kind == "chunk":
        chunk_vocab = build_chunk_vocab(corpus, vocab, args.chunk_vocab_size, size)
    config = ModelConfig(kind=kind, embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
                         layers=args.layers, max_chunk_len=size, n_senses=senses)
    model = build_model(config, vocab, chunk_vocab, seed=args.seed)
    cfg = TrainConfig(max_chunk_len=size, n_senses=senses, mode=args.approx,
                      lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      dropout=args.dropout, tau0=args.tau0, tau_min=args.tau_min,
                      tau_decay=args.tau_decay, seed=args.seed, clip=args.clip)
    log = train(model, train_corpus, valid, cfg, log_path=args.metrics)
    save_checkpoint(model, args.checkpoint, approx=args.approx,
                    text_mode=args.mode, max_sentence_len=args.max_len)
    print(f"trained {cfg.epochs} epochs on {len(train_corpus)} sentences")
    print(f"best epoch: {log.best_epoch}  valid perplexity: {log.best_perplexity:.6f}")
    print(f"checkpoint -> {args.checkpoint}")


def _check_shape_flags(args, config: ModelConfig) -> None:
    if args.lattice_size is not None and args.lattice_size != config.max_chunk_len:
        raise CliError(f"checkpoint was trained with --lattice-size {config.max_chunk_len}")
    if (args.embeddings_per_token is not None
            and args.embeddings_per_token != config.n_senses):
        raise CliError(
            f"checkpoint was trained with --embeddings-per-token {config.n_senses}")


def _load_for_eval(args) -> tuple[object, dict, list[list[int]]]:
    manifest = read_manifest(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    corpus = encode_corpus(_read_lines(args.corpus), model.token_vocab,
                           manifest["max_sentence_len"], manifest["text_mode"])
    if not corpus:
        raise CliError(f"no usable sentences in {args.corpus}")
    return model, manifest, corpus


def _cmd_eval(args) -> None:
    model, manifest, corpus = _load_for_eval(args)
    _check_shape_flags(args, model.config)
    mode = eval_mode_for(args.approx or manifest["approx"])
    report = evaluate_perplexity(corpus, model, mode)
    print(f"sentences: {len(report.sentences)}")
    print(f"tokens: {report.token_count}")
    print(f"log-likelihood: {report.total_logprob:.6f}")
    print(f"perplexity: {report.perplexity:.6f}")


def _surfaces(model, tokens) -> list[str]:
    return [model.token_vocab.surface(t) for t in tokens]


def segment_report(model, tokens) -> str:
    """One sentence's segmentation: greedy chunking in brackets, then the
    posterior chunk-length split at every token position (sums to 100%)."""
    run = model.start_run(train=False)
    result = forward_marginalize(lattice_for(tokens, model), run, ApproxMode.MARGINAL)
    post = edge_posteriors(result)
    path = greedy_segmentation(result.lattice, post)
    words = _surfaces(model, tokens)

    boxes = " ".join("[" + " ".join(words[e.src:e.dst]) + "]" for e in path.edges)
    lines = [boxes]
    for b in range(len(tokens)):
        by_len: dict[int, float] = {}
        for e in result.lattice.edges:
            if e.src <= b < e.dst:
                by_len[e.length] = by_len.get(e.length, 0.0) + post[e]
        split = "  ".join(f"len{l} {100.0 * p:.2f}%" for l, p in sorted(by_len.items()))
        lines.append(f"pos {b + 1} {words[b]}: {split}")
    return "\n".join(lines)


def _cmd_segment(args) -> None:
    model, _, corpus = _load_for_eval(args)
    if model.kind != "chunk":
        raise CliError("segment reports need a chunk-lattice checkpoint")
    for idx, tokens in enumerate(corpus[: args.limit]):
        print(f"# sentence {idx + 1}")
        print(segment_report(model, tokens))
        print()


def senses_report(model, tokens) -> str:
    """Each occurrence's preferred embedding with its posterior share and
    a short surface context window."""
    run = model.start_run(train=False)
    result = forward_marginalize(lattice_for(tokens, model), run, ApproxMode.MARGINAL)
    words = _surfaces(model, tokens)
    lines = []
    for t, dist in enumerate(sense_posteriors(result)):
        if len(dist) < 2:
            continue
        best = int(dist.argmax())
        left = " ".join(words[max(0, t - 3):t])
        right = " ".join(words[t + 1:t + 4])
        lines.append(f"{words[t]}: sense {best} {100.0 * dist[best]:.2f}% "
                     f"| {left} [{words[t]}] {right}".rstrip())
    return "\n".join(lines)


def _cmd_senses(args) -> None:
    model, _, corpus = _load_for_eval(args)
    if model.kind != "sense":
        raise CliError("sense reports need a multi-embedding checkpoint")
    for idx, tokens in enumerate(corpus[: args.limit]):
        print(f"# sentence {idx + 1}")
        print(senses_report(model, tokens))
        print()


_COMMANDS = {
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "segment": _cmd_segment,
    "senses": _cmd_senses,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except (CliError, CheckpointError, ValueError, OSError) as exc:
        print(f"latticelm: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
