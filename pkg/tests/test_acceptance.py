"""Acceptance criteria A1-A9; the PASS/FAIL lines are collected into an "acceptance" summary section.

A3 and A4 share one run of the desk-scale alignment experiment (about a
quarter of an hour on one CPU core).
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import spearmanr

from fel.cli import main as cli_main
from fel.config import TrainConfig, desk_config
from fel.cv import cross_validate
from fel.datagen import (
    CorpusParams, bracketize, chunks, decode_brackets, encode_boundary_labels, gen_ad_dataset, gen_pad_example,
    gen_synthetic_corpus, has_accidental_match, initials, parse_markup, weighted_mask,
)
from fel.datagen.examples import TrainingExample, encode_task
from fel.datagen.synthetic import check_disjoint_split, gen_ct_dataset
from fel.gradcheck import TOY_CONFIG, grad_check
from fel.model import collate, forward, init_model
from fel.pipeline import build_workspace, run_alignment_experiment
from fel.tensor import IGNORE_INDEX
from fel.tokenizer import CLS_ID, N_SPECIAL, SEP_ID, build_vocab, segment_viterbi
from fel.train import TASK_HEADS, evaluate, finetune

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.json"



def test_a1_gradient_fidelity(verdict):
    start = time.perf_counter()
    res = grad_check(TOY_CONFIG, seed=0, heads=("mlm", "nsp", "boundary", "pad"))
    seconds = time.perf_counter() - start
    n_heads = TOY_CONFIG.emb_dim // TOY_CONFIG.head_dim
    ok = res.max_rel_err < 1e-4 and seconds < 60 and n_heads == 2 and TOY_CONFIG.emb_dim == 16
    verdict("A1", ok, f"max_rel_err={res.max_rel_err:.2e} over {len(res.report.per_param)} tensors, "
                      f"{seconds:.1f}s")


def test_a2_data_generator_oracles(verdict):
    start = time.perf_counter()
    corpus = gen_synthetic_corpus(CorpusParams(n_docs=300, entity_lexicon_size=200, doc_len=60, seed=11))
    lines = [c.text for i, (s, raw) in enumerate(corpus.documents) for c in chunks(parse_markup(raw, s, i))]
    lines = [t for t in lines if len(t.split()) >= 6]
    rng = np.random.default_rng(11)
    pad_bad, n_pad = 0, 0
    while n_pad < 1000:
        i, j = rng.integers(len(lines), size=2)
        pair = gen_pad_example(lines[i], lines[j], rng)
        words = lines[i].split()
        a, b = pair.span
        pad_bad += initials(words[a:b]) != pair.positive.acronym
        pad_bad += has_accidental_match(pair.negative.acronym, lines[i])
        n_pad += 1

    ad = gen_ad_dataset(corpus, n_snippets=300, seed=11)
    n_pos = sum(x.label for x in ad)
    verbatim = sum(x.acronym in x.snippet.split() for x in ad)

    pool, test = gen_ct_dataset(corpus, n_pool=150, n_test=100, seed=11)
    vocab = build_vocab([q.query for q in pool + test], 300)
    round_trip_bad = 0
    for ex in pool + test:
        toks = segment_viterbi(ex.query, vocab)
        round_trip_bad += decode_brackets(encode_boundary_labels(toks, ex.spans), toks) != bracketize(ex.query,
                                                                                                       ex.spans)
    seconds = time.perf_counter() - start
    ok = pad_bad == 0 and 2 * n_pos == len(ad) and verbatim == 0 and round_trip_bad == 0 and seconds < 60
    verdict("A2", ok, f"{n_pad} PAD pairs ({pad_bad} bad), AD {n_pos}/{len(ad)} positive, {verbatim} verbatim, "
                      f"{round_trip_bad}/{len(pool) + len(test)} CT round-trip mismatches, {seconds:.1f}s")


@pytest.fixture(scope="module")
def alignment():
    run = desk_config()
    start = time.perf_counter()
    ws = build_workspace(run)
    n_tokens = sum(len(d.plain.split()) for d in ws.documents)
    progress = lambda msg: sys.__stdout__.write(f"  [{time.perf_counter() - start:6.0f}s] {msg}\n")  # noqa: E731
    report = run_alignment_experiment(run, ws, progress=progress)
    sys.__stdout__.write(report.to_tsv())
    return run, report, time.perf_counter() - start, n_tokens


def test_a3_alignment_ordering(alignment, verdict):
    run, report, seconds, n_tokens = alignment
    aligned, base = (("+".join(a)) for a in run.experiment.arms)
    c = report.comparison(aligned, base, 50)
    n_runs = len(report.grid[aligned][50].runs)
    ok = c.separated and n_runs == 10
    verdict("A3", ok, f"size 50: {aligned} {c.mean_a:.4f} vs {base} {c.mean_b:.4f}, diff {c.diff:+.4f}, "
                      f"pooled sigma {c.pooled_sigma:.4f}, {n_runs} runs/arm, corpus {n_tokens} words, "
                      f"{seconds / 60:.1f} min")


def test_a4_data_size_monotonicity(alignment, verdict):
    run, report, _, _ = alignment
    aligned = "+".join(run.experiment.arms[0])
    sizes = sorted(report.grid[aligned])
    means = [report.mean_accuracy(aligned, s) for s in sizes]
    rho = spearmanr(sizes, means).statistic
    ok = sizes == [25, 50, 100, 200] and rho > 0
    verdict("A4", ok, f"{aligned} mean accuracy {dict(zip(sizes, (round(m, 4) for m in means)))}, "
                      f"Spearman {rho:.3f}")


def test_a5_scope_freezing(toy_ws, toy_model_cfg, verdict):
    enc = encode_task(toy_ws.ct_pool, "ct", toy_ws.vocab, toy_model_cfg.max_seq_len)
    problems = []
    for scope, frozen in (("pred", {"embedding", "transformer"}), ("pred+trm", {"embedding"})):
        model = init_model(toy_model_cfg, 0)
        before = model.snapshot()
        finetune(model, enc[:20], enc[20:], "ct", TrainConfig(lr=1e-2, batch_size=4, epochs=3, scope=scope))
        for name, arr in before.items():
            same = np.array_equal(model[name].data, arr)
            if model.groups[name] in frozen and not same:
                problems.append(f"{scope}:{name} moved")
            if model.groups[name] == "head" and name.startswith("boundary") and same:
                problems.append(f"{scope}:{name} did not train")
    verdict("A5", not problems, "frozen groups bit-identical" if not problems else ", ".join(problems))


def test_a6_metric_identities(toy_model_cfg, verdict):
    rng = np.random.default_rng(6)
    model = init_model(toy_model_cfg, 0)
    labels = np.tile(np.arange(4), 1500)
    rng.shuffle(labels)
    examples, k = [], 0
    while k < labels.size:
        n = min(30, labels.size - k)
        ids = [CLS_ID, *rng.integers(N_SPECIAL, toy_model_cfg.vocab_size, size=n).tolist(), SEP_ID]
        examples.append(TrainingExample(ids=ids, segment_ids=[0] * len(ids), objective_mask=["boundary"],
                                        boundary_labels=[IGNORE_INDEX, *labels[k:k + n].tolist(), IGNORE_INDEX]))
        k += n
    m = evaluate(model, examples, "ct")
    # independent recomputation of the perplexity identity from raw logits
    batch = collate(examples, ["boundary"], toy_model_cfg.max_seq_len)
    z = forward(model, batch, ["boundary"], "eval").logits[TASK_HEADS["ct"]].astype(np.float64)
    y = batch.labels["boundary"]
    keep = y != IGNORE_INDEX
    nll = float(np.mean(logsumexp(z[keep], axis=1) - z[keep][np.arange(keep.sum()), y[keep]]))
    rel = abs(m.perplexity - math.exp(nll)) / m.perplexity
    ok = (m.n_examples >= 5000 and abs(m.accuracy - 0.25) <= 0.03 and abs(m.perplexity - 4.0) <= 0.1
          and rel < 1e-9)
    verdict("A6", ok, f"n={m.n_examples} accuracy={m.accuracy:.4f} perplexity={m.perplexity:.4f} "
                      f"|ppl-exp(nll)|/ppl={rel:.1e}")


def test_a7_masking_bias(verdict):
    rng = np.random.default_rng(0)
    counts = [1, 3, 9, 20, 50, 120, 300, 700, 1500, 4000, 9000, 20000]
    ids = list(range(N_SPECIAL, N_SPECIAL + len(counts)))
    freqs = dict(zip(ids, counts))
    rate, trials = 0.15, 10_000
    w = np.array(counts, dtype=float) ** -0.5
    expected = rate * len(counts) * w / w.sum()
    assert (expected <= 1).all()
    hits = np.zeros(len(counts))
    for _ in range(trials):
        hits[weighted_mask(ids, freqs, rate, rng, 100).positions] += 1
    z = (hits - trials * expected) / np.sqrt(trials * expected * (1 - expected))
    verdict("A7", bool(np.all(np.abs(z) < 3)), f"max |z| = {np.abs(z).max():.2f} over {len(counts)} positions, "
                                                f"{trials} trials")


def test_a8_cv_protocol(toy_ws, toy_model_cfg, verdict):
    model = init_model(toy_model_cfg, 0)
    rep = cross_validate(model, toy_ws.vocab, toy_ws.ct_pool, "ct", 5, [0, 1],
                         TrainConfig(lr=1e-2, batch_size=8, epochs=1, scope="pred"), "ct_disjoint",
                         toy_ws.ct_test, train_size=10)
    disjoint = check_disjoint_split([x.query for x in toy_ws.ct_pool], [x.query for x in toy_ws.ct_test])
    pairs = sorted((r.fold, r.seed) for r in rep.runs)
    ok = len(rep.runs) == 10 and len(set(pairs)) == 10 and disjoint
    verdict("A8", ok, f"{len(rep.runs)} runs, split disjoint={disjoint}")


def test_a9_cli_replay(tmp_path, verdict):
    def tree(root):
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    gen = tmp_path / "gen"
    assert cli_main(["gen-data", "--config", str(TOY), "--out", str(gen)]) == 0
    mismatched = []
    for command, extra in (
        ("gen-data", []),
        ("pretrain", []),
        ("finetune", ["--train", str(gen / "ct_pool.jsonl"), "--test", str(gen / "ct_test.jsonl"),
                      "--train-size", "10"]),
        ("gradcheck", []),
    ):
        first, second = tmp_path / f"{command}1", tmp_path / f"{command}2"
        assert cli_main([command, "--config", str(TOY), "--out", str(first), "--seed", "4", *extra]) == 0
        assert cli_main([command, "--config", str(first / "resolved_config.json"), "--out", str(second), *extra]) == 0
        if tree(first) != tree(second):
            mismatched.append(command)
    verdict("A9", not mismatched, "replays byte-identical" if not mismatched else f"differs: {mismatched}")
