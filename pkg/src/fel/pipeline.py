"""End-to-end plumbing: synthetic corpus, vocabulary, pretraining arms, CV grid."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .config import RunConfig
from .cv import AlignmentReport, CVReport, compare_arms, cross_validate
from .datagen.acronyms import ADExample
from .datagen.examples import OBJECTIVES, PretrainData
from .datagen.markup import Document, parse_markup
from .datagen.synthetic import CTExample, SyntheticCorpus, gen_ad_dataset, gen_ct_dataset, gen_synthetic_corpus
from .model import Model, init_model
from .tokenizer import Vocab, build_vocab
from .train import PretrainResult, pretrain


@dataclass
class Workspace:
    corpus: SyntheticCorpus
    documents: list[Document]
    vocab: Vocab
    ct_pool: list[CTExample]
    ct_test: list[CTExample]
    ad_set: list[ADExample]


def corpus_documents(corpus: SyntheticCorpus) -> list[Document]:
    return [parse_markup(raw, stream, i) for i, (stream, raw) in enumerate(corpus.documents)]


def build_workspace(run: RunConfig) -> Workspace:
    exp, tok = run.experiment, run.tokenizer
    corpus = gen_synthetic_corpus(exp.corpus)
    docs = corpus_documents(corpus)
    vocab = build_vocab([d.plain for d in docs], tok.vocab_size, tok.max_piece_len, tok.min_count)
    pool, test = gen_ct_dataset(corpus, exp.n_pool, exp.n_test, exp.corpus.seed, exp.corpus)
    ad = gen_ad_dataset(corpus, exp.n_ad_snippets, exp.corpus.seed, exp.corpus)
    return Workspace(corpus, docs, vocab, pool, test, ad)


def pretrain_data(ws: Workspace, run: RunConfig) -> PretrainData:
    return PretrainData(ws.documents, ws.vocab, run.model.max_seq_len, run.master_seed, run.tokenizer.alpha,
                        run.experiment.mask_rate, run.experiment.mask_exponent)


def arm_name(objectives: Sequence[str]) -> str:
    return "+".join(o for o in OBJECTIVES if o in objectives)


def pretrain_arm(ws: Workspace, run: RunConfig, objectives: Sequence[str],
                 data: PretrainData | None = None, log_path=None) -> tuple[Model, PretrainResult]:
    """Fresh model, same seed and step budget for every arm; only the objectives differ."""
    model = init_model(replace(run.model, vocab_size=len(ws.vocab)), run.master_seed)
    cfg = replace(run.pretrain, objectives=list(objectives))
    result = pretrain(model, data or pretrain_data(ws, run), cfg, log_path)
    return model, result


def cv_grid(model: Model, ws: Workspace, run: RunConfig, sizes: Sequence[int],
            progress: Callable[[str], None] | None = None, arm: str = "") -> dict[int, CVReport]:
    exp = run.experiment
    grid = {}
    for size in sizes:
        if exp.task == "ct":
            rep = cross_validate(model, ws.vocab, ws.ct_pool, "ct", exp.k_folds, exp.seeds, run.finetune,
                                 "ct_disjoint", ws.ct_test, size)
        else:
            rep = cross_validate(model, ws.vocab, ws.ad_set, "ad", exp.k_folds, exp.seeds, run.finetune,
                                 "standard", train_size=size)
        grid[size] = rep
        if progress:
            m, s = rep.accuracy
            progress(f"{arm}\tsize={size}\taccuracy={m:.4f}±{s:.4f}")
    return grid


def run_alignment_experiment(run: RunConfig, ws: Workspace | None = None,
                             progress: Callable[[str], None] | None = None,
                             pretrained: dict[str, tuple[Model, PretrainResult]] | None = None) -> AlignmentReport:
    """Pretrain one model per objective arm under a shared budget, then CV each at every finetune size."""
    run.validate()
    if len(run.experiment.arms) < 2:
        raise ValueError("the experiment needs at least two arms")
    ws = ws or build_workspace(run)
    data = pretrain_data(ws, run)
    pretrained = dict(pretrained or {})
    grid, budgets = {}, {}
    for objectives in run.experiment.arms:
        name = arm_name(objectives)
        if name not in pretrained:
            pretrained[name] = pretrain_arm(ws, run, objectives, data)
            if progress:
                progress(f"{name}\tpretrained {pretrained[name][1].steps} steps")
        model, result = pretrained[name]
        budgets[name] = result.examples_seen
        grid[name] = cv_grid(model, ws, run, run.experiment.sizes, progress, name)
    return compare_arms(grid, budgets)


# ---------------------------------------------------------------- sweeps

def finetune_sweep(model: Model, ws: Workspace, run: RunConfig, settings: dict[str, dict], size: int,
                   progress: Callable[[str], None] | None = None) -> dict[str, CVReport]:
    """Cross-validate one pretrained model under several finetune overrides.

    ``settings`` maps a label to TrainConfig overrides, e.g. ``{"lr=1e-4": {"lr": 1e-4}}``
    for a learning-rate sweep or ``{"pred": {"scope": "pred"}}`` for a scope sweep.
    """
    out = {}
    for label, overrides in settings.items():
        sub = replace(run, finetune=replace(run.finetune, **overrides))
        sub.validate()
        out[label] = cv_grid(model, ws, sub, [size], progress, label)[size]
    return out


def mean_best_epoch(report: CVReport) -> float:
    return sum(r.best_epoch for r in report.runs) / len(report.runs)


def model_size_sweep(run: RunConfig, shapes: Sequence[tuple[int, int]], ws: Workspace | None = None,
                     progress: Callable[[str], None] | None = None) -> dict[str, dict[int, CVReport]]:
    """Pretrain one model per ``(emb_dim, n_layers)`` with the first arm's objectives and CV each."""
    ws = ws or build_workspace(run)
    data = pretrain_data(ws, run)
    out = {}
    for emb, layers in shapes:
        sub = replace(run, model=replace(run.model, emb_dim=emb, n_layers=layers))
        sub.validate()
        label = f"{emb}x{layers}"
        model, _ = pretrain_arm(ws, sub, sub.experiment.arms[0], data)
        out[label] = cv_grid(model, ws, sub, sub.experiment.sizes, progress, label)
    return out
