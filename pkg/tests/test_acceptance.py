"""Acceptance gate: exact oracles, invariants, and directional training
trends, one numbered criterion per test.

Each test prints a `[criterion N] PASS/FAIL ...` summary line (visible
under `pytest -s`) before asserting. The two trend criteria (8, 9) and
the training-mode comparison (10) train real models and together take
roughly 40 minutes on one CPU core; everything else finishes in seconds.
"""

import math
import time

import numpy as np
import pytest

from helpers import FixedHead, tiny_chunk_model, tiny_sense_model
from test_heads import all_chunks, toy_sentinel_head

from latticelm import tensor as T
from latticelm.checkpoint import load_checkpoint, save_checkpoint
from latticelm.inference import (
    PredecessorDist,
    brute_force_logprob,
    edge_posteriors,
    forward_marginalize,
    greedy_segmentation,
    gumbel_weights,
    sample_predecessor,
    sequential_logprob,
)
from latticelm.lattice import Edge, build_dense, build_multilattice
from latticelm.model import ModelConfig, build_model
from latticelm.training import (
    TrainConfig,
    evaluate_perplexity,
    lattice_for,
    train,
)
from latticelm.vocab import build_chunk_vocab, preprocess


def _criterion(num, ok, detail):
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'} {detail}", flush=True)
    assert ok, f"criterion {num}: {detail}"


def _name(prefix, i):
    # letters only: digit runs would be folded into the number token
    return prefix + chr(97 + i // 26) + chr(97 + i % 26)


def planted_bigram_corpus(n_sentences, seed, n_pairs=35, n_soft=15, n_fillers=96,
                          p_phrase=0.5, p_soft=0.15, units_lo=3, units_hi=7):
    """Zipf filler stream with planted two-word phrases.

    `n_pairs` phrases are deterministic (first word always followed by its
    partner); `n_soft` phrases complete only half the time, which keeps a
    genuinely ambiguous segmentation posterior in play. 35+15 pairs, 96
    fillers and the 4 reserved types give exactly 200 vocabulary entries.
    """
    rng = np.random.default_rng(seed)
    firsts = [_name("pf", i) for i in range(n_pairs)]
    seconds = [_name("ps", i) for i in range(n_pairs)]
    soft_firsts = [_name("sf", i) for i in range(n_soft)]
    soft_seconds = [_name("ss", i) for i in range(n_soft)]
    fillers = [_name("w", i) for i in range(n_fillers)]
    zipf = 1.0 / np.arange(1, n_fillers + 1) ** 1.1
    zipf /= zipf.sum()
    lines = []
    for _ in range(n_sentences):
        units = rng.integers(units_lo, units_hi)
        words = []
        for _ in range(units):
            u = rng.random()
            if u < p_phrase:
                k = rng.integers(n_pairs)
                words += [firsts[k], seconds[k]]
            elif u < p_phrase + p_soft:
                k = rng.integers(n_soft)
                words.append(soft_firsts[k])
                if rng.random() < 0.5:
                    words.append(soft_seconds[k])
                else:
                    words.append(fillers[rng.choice(n_fillers, p=zipf)])
            else:
                words.append(fillers[rng.choice(n_fillers, p=zipf)])
        lines.append(" ".join(words))
    return lines


def homograph_corpus(n_sentences, seed, n_homo=20, n_fillers=120, p_homo=0.55,
                     units_lo=3, units_hi=7):
    """Two-topic corpus where 20 homographs take disjoint continuation sets.

    Each sentence draws a latent topic; every homograph is followed by one
    of three continuation words that never occur under the other topic, and
    filler words are likewise topic-exclusive, so the homographs' context
    classes are fully disjoint.
    """
    rng = np.random.default_rng(seed)
    homos = [_name("h", i) for i in range(n_homo)]
    cont = {0: [[_name("ca", 3 * i + j) for j in range(3)] for i in range(n_homo)],
            1: [[_name("cb", 3 * i + j) for j in range(3)] for i in range(n_homo)]}
    fillers = {0: [_name("wa", i) for i in range(n_fillers)],
               1: [_name("wb", i) for i in range(n_fillers)]}
    zipf = 1.0 / np.arange(1, n_fillers + 1) ** 1.1
    zipf /= zipf.sum()
    lines = []
    for _ in range(n_sentences):
        topic = int(rng.random() < 0.5)
        units = rng.integers(units_lo, units_hi)
        words = [fillers[topic][rng.choice(n_fillers, p=zipf)]]
        for _ in range(units):
            if rng.random() < p_homo:
                k = rng.integers(n_homo)
                words += [homos[k], cont[topic][k][rng.integers(3)]]
            else:
                words.append(fillers[topic][rng.choice(n_fillers, p=zipf)])
        lines.append(" ".join(words))
    return lines


def _train_chunk(train_c, valid_c, vocab, L, seed, mode):
    chunks = build_chunk_vocab(train_c, vocab, 120 if L > 1 else 0, L)
    config = ModelConfig(kind="chunk", embed_dim=12, hidden_dim=12, layers=1,
                         max_chunk_len=L)
    model = build_model(config, vocab, chunks, seed=seed)
    cfg = TrainConfig(max_chunk_len=L, mode=mode, epochs=5, seed=seed)
    return train(model, train_c, valid_c, cfg).best_perplexity


def _train_sense(train_c, valid_c, vocab, E, seed):
    config = ModelConfig(kind="sense", embed_dim=24, hidden_dim=12, layers=1,
                         n_senses=E)
    model = build_model(config, vocab, seed=seed)
    cfg = TrainConfig(n_senses=E, mode="marginal", epochs=18, seed=seed)
    return train(model, train_c, valid_c, cfg).best_perplexity


@pytest.fixture(scope="module")
def bigram_data():
    lines = planted_bigram_corpus(7700, seed=99)
    corpus, vocab = preprocess(lines, vocab_size=200, max_length=50, mode="word")
    return corpus[:7000], corpus[7000:], vocab


@pytest.fixture(scope="module")
def chunk_trend(bigram_data):
    # shared by criteria 8 and 10: marginal-mode arms, 3 seeds each
    train_c, valid_c, vocab = bigram_data
    t0 = time.time()
    ppl = {(L, seed): _train_chunk(train_c, valid_c, vocab, L, seed, "marginal")
           for L in (1, 2) for seed in (0, 1, 2)}
    return ppl, time.time() - t0


def test_01_forward_matches_enumeration_oracle():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(50):
        head = FixedHead(seed=100 + i)
        n = int(rng.integers(2, 11))
        tokens = [int(t) for t in rng.integers(0, 6, size=n)]
        if i % 2 == 0:
            lat = build_dense(tokens, 1 + (i // 2) % 3)
        else:
            lat = build_multilattice(tokens, 1 + (i // 2) % 3)
        mode = ("direct", "mc", "marginal", "gumbel")[i % 4]
        fw = forward_marginalize(lat, head, mode, tau=0.9,
                                 rng=np.random.default_rng(i)).value
        worst = max(worst, abs(fw - brute_force_logprob(lat, head)))
    dt = time.time() - t0
    _criterion(1, worst < 1e-9 and dt < 10,
               f"max |forward - enumeration| = {worst:.3e} (< 1e-9), {dt:.1f}s")


def test_02_trivial_lattices_match_sequential_baseline():
    t0 = time.time()
    worst = 0.0
    for i in range(20):
        if i % 2 == 0:
            model, corpus = tiny_chunk_model(max_len=1, budget=0, seed=i)
        else:
            model, corpus = tiny_sense_model(n_senses=1, seed=i)
        tokens = corpus[i % len(corpus)]
        fw = forward_marginalize(lattice_for(tokens, model),
                                 model.start_run(), "marginal").value
        seq = sequential_logprob(tokens, model.start_run())
        worst = max(worst, abs(fw - seq))
    dt = time.time() - t0
    _criterion(2, worst < 1e-9 and dt < 10,
               f"max |lattice - sequential| = {worst:.3e} (< 1e-9), {dt:.1f}s")


def test_03_mixture_and_sense_distributions_normalize():
    t0 = time.time()
    head, rng = toy_sentinel_head()
    chunks = list(all_chunks(3, 3))
    assert len(chunks) == 39
    worst_mix = 0.0
    for _ in range(10):
        hidden = T.Tensor(rng.normal(size=4))
        total = sum(np.exp(head.chunk_logprob(hidden, c).item()) for c in chunks)
        worst_mix = max(worst_mix, abs(total - 1.0))
    model, _ = tiny_sense_model(n_senses=2, seed=0)
    worst_sense = 0.0
    for _ in range(5):
        hidden = T.Tensor(rng.normal(size=model.config.hidden_dim))
        mass = np.exp(model.head.sense_dist(hidden).data).sum()
        worst_sense = max(worst_sense, abs(mass - 1.0))
    dt = time.time() - t0
    _criterion(3, worst_mix < 1e-8 and worst_sense < 1e-12 and dt < 5,
               f"39-chunk mass off by {worst_mix:.3e} (< 1e-8), "
               f"sense mass off by {worst_sense:.3e} (< 1e-12), {dt:.1f}s")


def test_04_lattice_loss_gradients_match_finite_differences():
    t0 = time.time()
    model, corpus = tiny_chunk_model(embed=6, hidden=8, layers=2, max_len=2,
                                     budget=4, seed=3)
    tokens = corpus[1]
    assert len(tokens) == 4
    lat = lattice_for(tokens, model)
    params = list(model.params.values())

    def loss_marginal():
        return T.scale(forward_marginalize(lat, model.start_run(),
                                           "marginal").logprob, -1.0)

    def loss_gumbel():
        # identical noise on every re-evaluation keeps the loss differentiable
        return T.scale(forward_marginalize(lat, model.start_run(), "gumbel",
                                           tau=0.7,
                                           rng=np.random.default_rng(11)).logprob,
                       -1.0)

    err_m = T.grad_check(loss_marginal, params)
    err_g = T.grad_check(loss_gumbel, params)
    dt = time.time() - t0
    _criterion(4, err_m < 1e-6 and err_g < 1e-6 and dt < 60,
               f"max grad error marginal {err_m:.3e}, gumbel {err_g:.3e} "
               f"(< 1e-6), {dt:.1f}s")


def test_05_predecessor_sampling_statistics():
    t0 = time.time()
    probs = [0.2, 0.3, 0.5]
    edges = [Edge(0, 1, (i,), i) for i in range(3)]
    joint = T.constant(np.log(probs))
    mass = T.logsumexp(joint)
    dist = PredecessorDist(edges, joint, mass, np.exp(joint.data - mass.data))
    n = 10_000
    rng = np.random.default_rng(7)
    mc = np.bincount([sample_predecessor(dist, rng) for _ in range(n)], minlength=3)
    gum = np.zeros(3, dtype=int)
    for _ in range(n):
        gum[np.argmax(gumbel_weights(dist, tau=0.01, rng=rng).data)] += 1
    worst_sig = 0.0
    for k, p in enumerate(probs):
        sigma = math.sqrt(p * (1 - p) / n)
        worst_sig = max(worst_sig, abs(mc[k] / n - p) / sigma,
                        abs(gum[k] / n - p) / sigma)
    flat = gumbel_weights(dist, tau=1e6, rng=rng).data
    flat_err = float(np.abs(flat - 1.0 / 3.0).max())
    dt = time.time() - t0
    _criterion(5, worst_sig < 3 and flat_err < 1e-3 and dt < 30,
               f"worst deviation {worst_sig:.2f} sigma (< 3), "
               f"high-tau flatness {flat_err:.2e} (< 1e-3), {dt:.1f}s")


def test_06_edge_posteriors_and_greedy_decoding():
    t0 = time.time()
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        r = i % 4
        if r == 0:
            model, corpus = tiny_chunk_model(max_len=2, budget=4, seed=i)
            lat = lattice_for(corpus[i % len(corpus)], model)
            run = model.start_run()
        elif r == 1:
            model, corpus = tiny_sense_model(n_senses=2, seed=i)
            lat = lattice_for(corpus[i % len(corpus)], model)
            run = model.start_run()
        else:
            run = FixedHead(seed=i)
            tokens = [int(t) for t in rng.integers(0, 5, size=rng.integers(2, 9))]
            if r == 2:
                lat = build_dense(tokens, int(rng.integers(1, 4)))
            else:
                lat = build_multilattice(tokens, int(rng.integers(1, 4)))
        post = edge_posteriors(forward_marginalize(lat, run, "marginal"))
        for b in range(lat.n_tokens):
            s = sum(p for e, p in post.items() if e.src <= b < e.dst)
            worst = max(worst, abs(s - 1.0))
    for seed in range(10):
        model, corpus = tiny_chunk_model(max_len=1, budget=0, seed=seed)
        lat = lattice_for(corpus[seed % len(corpus)], model)
        post = edge_posteriors(forward_marginalize(lat, model.start_run(),
                                                   "marginal"))
        path = greedy_segmentation(lat, post)
        assert set(path.edges) == set(lat.edges)
    dt = time.time() - t0
    _criterion(6, worst < 1e-8 and dt < 30,
               f"max boundary-coverage error {worst:.3e} (< 1e-8), greedy "
               f"recovered 10/10 unique paths, {dt:.1f}s")


def test_07_cost_accounting_matches_lattice_size():
    t0 = time.time()
    eos = 99
    for n in range(2, 9):
        for L in range(1, 5):
            if n < L:
                continue
            lat = build_dense(list(range(n - 1)) + [eos], L, eos_id=eos)
            expect = L * n - L * (L - 1) // 2 - min(L - 1, n - 1)
            assert len(lat.edges) == expect, (n, L)
        for E in (1, 2, 3):
            lat = build_multilattice(list(range(n - 1)) + [eos], E, eos_id=eos)
            assert len(lat.edges) == E * (n - 1) + 1, (n, E)
    # one stacked step primes the start-of-sentence state; the rest is per edge
    model, corpus = tiny_chunk_model(max_len=2, budget=4, seed=1)
    lat = lattice_for(corpus[0], model)
    before = model.stack.step_count
    forward_marginalize(lat, model.start_run(), "marginal")
    delta_chunk = model.stack.step_count - before - model.config.layers
    smodel, scorpus = tiny_sense_model(n_senses=3, seed=1)
    slat = lattice_for(scorpus[0], smodel)
    before = smodel.stack.step_count
    forward_marginalize(slat, smodel.start_run(), "marginal")
    delta_sense = smodel.stack.step_count - before - smodel.config.layers
    ok = (delta_chunk == len(lat.edges) * model.config.layers
          and delta_sense == len(slat.edges) * smodel.config.layers)
    dt = time.time() - t0
    _criterion(7, ok and dt < 1,
               f"cell steps beyond the start state {delta_chunk} = "
               f"{len(lat.edges)} edges x {model.config.layers} layers (and "
               f"{delta_sense} on the sense lattice), edge-count formulas "
               f"exact, {dt:.2f}s")


def test_08_chunk_lattices_beat_token_baseline(chunk_trend):
    ppl, dt = chunk_trend
    mean1 = np.mean([ppl[(1, s)] for s in (0, 1, 2)])
    mean2 = np.mean([ppl[(2, s)] for s in (0, 1, 2)])
    gap = (mean1 - mean2) / mean1
    _criterion(8, gap >= 0.02 and dt < 1800,
               f"valid ppl L=1 {mean1:.4f} vs L=2 {mean2:.4f}, relative gap "
               f"{100 * gap:.2f}% (>= 2%), 3 seeds, {dt / 60:.1f} min")


def test_09_sense_lattices_beat_single_embedding():
    t0 = time.time()
    lines = homograph_corpus(5600, seed=77)
    corpus, vocab = preprocess(lines, vocab_size=400, max_length=50, mode="word")
    train_c, valid_c = corpus[:5000], corpus[5000:]
    ppl = {(E, seed): _train_sense(train_c, valid_c, vocab, E, seed)
           for E in (1, 2) for seed in (0, 1, 2)}
    mean1 = np.mean([ppl[(1, s)] for s in (0, 1, 2)])
    mean2 = np.mean([ppl[(2, s)] for s in (0, 1, 2)])
    gap = (mean1 - mean2) / mean1
    dt = time.time() - t0
    _criterion(9, gap >= 0.02 and dt < 1800,
               f"valid ppl E=1 {mean1:.4f} vs E=2 {mean2:.4f}, relative gap "
               f"{100 * gap:.2f}% (>= 2%), 3 seeds, {dt / 60:.1f} min")


def test_10_marginal_training_beats_sampled_training(bigram_data, chunk_trend):
    train_c, valid_c, vocab = bigram_data
    ppl, _ = chunk_trend
    mean_marginal = np.mean([ppl[(2, s)] for s in (0, 1, 2)])
    mean_mc = np.mean([_train_chunk(train_c, valid_c, vocab, 2, s, "mc")
                       for s in (0, 1, 2)])
    _criterion(10, mean_marginal <= mean_mc,
               f"valid ppl marginal {mean_marginal:.4f} <= monte-carlo "
               f"{mean_mc:.4f}, 3 seeds")


def test_11_checkpoint_round_trip_is_bit_exact(tmp_path):
    model, corpus = tiny_chunk_model(seed=4)
    cfg = TrainConfig(max_chunk_len=2, epochs=1, seed=4)
    train(model, corpus, corpus, cfg)
    before = evaluate_perplexity(corpus, model, "marginal").perplexity
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    after = evaluate_perplexity(corpus, load_checkpoint(path), "marginal").perplexity
    _criterion(11, after == before,
               f"perplexity {before!r} reproduced bit-exactly after reload")
