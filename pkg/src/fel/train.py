"""Adam, multitask pretraining, finetuning with perplexity-based selection, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .datagen.examples import OBJECTIVE_HEADS, BucketSampler, PretrainData, TrainingExample
from .model import Model, collate, forward, reset_heads, scope_params
from .tensor import IGNORE_INDEX

TASK_HEADS = {"ct": "boundary", "ad": "pad"}
HEAD_OBJECTIVES = {h: o for o, h in OBJECTIVE_HEADS.items()}
EVAL_BATCH = 256


class NonFiniteGradient(FloatingPointError):
    pass


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> None:
    """Bias-corrected Adam, updating ``params`` in place.

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves parameters and state untouched.
    """
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradient(f"non-finite gradient in {', '.join(bad)} at step {state.t + 1}")
    for n, g in grads.items():
        if params[n].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {n} {params[n].shape}")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for n, g in grads.items():
        if n not in state.m:
            state.m[n] = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
        m, v = state.m[n], state.v[n]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[n] -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(params[n].dtype, copy=False)


class Adam:
    def __init__(self, model: Model, names: Sequence[str], cfg: TrainConfig):
        self.model = model
        self.names = list(names)
        self.cfg = cfg
        self.state = AdamState()

    def step(self) -> None:
        P = self.model.params
        adam_step({n: P[n].data for n in self.names}, {n: P[n].grad for n in self.names}, self.state, self.cfg)
        for n in self.names:
            P[n].zero_grad()


# ---------------------------------------------------------------- metrics

@dataclass
class Metrics:
    accuracy: float
    perplexity: float
    nll: float
    n_examples: int
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "perplexity": self.perplexity, "nll": self.nll,
                "n_examples": self.n_examples, "confusion": self.confusion}


def metrics_from_logits(logits: np.ndarray, targets: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Metrics:
    """Accuracy and perplexity over the rows whose target is not ignored."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1, np.shape(logits)[-1])
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    keep = targets != ignore_index
    if not keep.any():
        raise ValueError("no supervised labels to evaluate")
    z, y = logits[keep], targets[keep]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = float(-logp[np.arange(y.size), y].mean())
    pred = logits[keep].argmax(axis=1)
    k = logits.shape[1]
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return Metrics(float((pred == y).mean()), math.exp(nll), nll, int(y.size), confusion.tolist())


def evaluate(model: Model, examples: Sequence[TrainingExample], task: str) -> Metrics:
    head = TASK_HEADS.get(task)
    if head is None:
        raise ValueError(f"unknown task {task!r}")
    if not examples:
        raise ValueError("no supervised labels to evaluate")
    logits, targets = [], []
    for i in range(0, len(examples), EVAL_BATCH):
        chunk = examples[i:i + EVAL_BATCH]
        batch = collate(chunk, [head], model.cfg.max_seq_len)
        out = forward(model, batch, [head], "eval")
        z = out.logits[head]
        logits.append(z.reshape(-1, z.shape[-1]))
        targets.append(batch.labels[head].reshape(-1))
    return metrics_from_logits(np.concatenate(logits), np.concatenate(targets))


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainResult:
    model: Model
    log: list[tuple[int, str, float]]
    steps: int
    examples_seen: int

    def running_means(self, window: int) -> dict[str, list[float]]:
        """Mean loss per objective over consecutive windows of ``window`` log rows."""
        series: dict[str, list[float]] = {}
        for _, obj, loss in self.log:
            series.setdefault(obj, []).append(loss)
        return {o: [float(np.mean(v[i:i + window])) for i in range(0, len(v), window)] for o, v in series.items()}


def write_loss_log(path, log: Sequence[tuple[int, str, float]], append: bool = True) -> None:
    with open(Path(path), "a" if append else "w", encoding="utf-8") as fh:
        for step, obj, loss in log:
            fh.write(f"{step}\t{obj}\t{loss!r}\n")


def pretrain(model: Model, data: PretrainData, cfg: TrainConfig, log_path=None) -> PretrainResult:
    """Run ``cfg.max_steps`` optimiser steps, one objective bucket per batch.

    The step count and batch size alone fix the example budget, so ablation
    arms with different objective sets consume the same number of examples.
    All parameter groups are trained.
    """
    cfg.validate()
    sampler = BucketSampler(data, cfg.objectives, cfg.seed)
    model.set_trainable(model.names())
    model.dropout = cfg.dropout
    model.dropout_rng = np.random.default_rng([cfg.seed, 13])
    opt = Adam(model, model.names(), cfg)
    log: list[tuple[int, str, float]] = []
    for step in range(cfg.max_steps):
        bucket = sampler.bucket_for_step(step)
        heads = {"mlm_nsp": sampler.lm_heads, "hyp": ("boundary",), "pad": ("pad",)}[bucket]
        batch = collate(sampler.batch(bucket, cfg.batch_size), heads, model.cfg.max_seq_len)
        out = forward(model, batch, heads, "train")
        out.total.backward()
        opt.step()
        for h, loss in out.losses.items():
            log.append((step, HEAD_OBJECTIVES[h], loss.item()))
    if log_path is not None:
        write_loss_log(log_path, log)
    return PretrainResult(model, log, cfg.max_steps, cfg.max_steps * cfg.batch_size)


# ---------------------------------------------------------------- finetuning

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev: Metrics


@dataclass
class FinetuneResult:
    model: Model
    trace: list[EpochRecord]
    best_epoch: int
    best_accuracy_epoch: int

    @property
    def best(self) -> EpochRecord:
        return self.trace[self.best_epoch - 1]


def select_epochs(trace: Sequence[EpochRecord]) -> tuple[int, int]:
    """(lowest dev perplexity epoch, highest dev accuracy epoch); ties go to the earliest."""
    if not trace:
        raise ValueError("empty trace")
    best = min(trace, key=lambda r: (r.dev.perplexity, r.epoch))
    best_acc = max(trace, key=lambda r: (r.dev.accuracy, -r.epoch))
    return best.epoch, best_acc.epoch


def _prepare(model: Model, heads: Sequence[str], cfg: TrainConfig) -> Adam:
    if cfg.reset_head:
        reset_heads(model, heads, cfg.seed)
    names = scope_params(model, cfg.scope)
    model.set_trainable(names)
    model.dropout = cfg.dropout
    model.dropout_rng = np.random.default_rng([cfg.seed, 19])
    return Adam(model, names, cfg)


def _train_batch(model: Model, opt: Adam, examples, head: str) -> float:
    batch = collate(examples, [head], model.cfg.max_seq_len)
    out = forward(model, batch, [head], "train")
    out.total.backward()
    opt.step()
    return out.total.item()


def _check_dev(metrics: Metrics, epoch: int) -> None:
    if not math.isfinite(metrics.perplexity):
        raise FloatingPointError(f"dev perplexity is not finite after epoch {epoch}")


def finetune(model: Model, train: Sequence[TrainingExample], dev: Sequence[TrainingExample], task: str,
             cfg: TrainConfig) -> FinetuneResult:
    """Train for ``cfg.epochs`` and keep the epoch with the lowest dev perplexity.

    Ties go to the earliest epoch.  ``model`` is updated in place and ends
    holding the selected parameters.
    """
    cfg.validate()
    if not train or not dev:
        raise ValueError("finetuning needs non-empty train and dev sets")
    if cfg.epochs < 1:
        raise ValueError("finetuning needs at least one epoch")
    head = TASK_HEADS[task]
    opt = _prepare(model, [head], cfg)
    rng = np.random.default_rng([cfg.seed, 17])
    trace: list[EpochRecord] = []
    best_snap, best_ppl = None, math.inf
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = [_train_batch(model, opt, [train[k] for k in order[i:i + cfg.batch_size]], head)
                  for i in range(0, len(train), cfg.batch_size)]
        metrics = evaluate(model, dev, task)
        _check_dev(metrics, epoch)
        trace.append(EpochRecord(epoch, float(np.mean(losses)), metrics))
        if metrics.perplexity < best_ppl:
            best_ppl = metrics.perplexity
            best_snap = {n: model[n].data.copy() for n in opt.names}
    model.restore(best_snap)
    return FinetuneResult(model, trace, *select_epochs(trace))


def finetune_multitask(model: Model, tasks: dict[str, tuple[Sequence[TrainingExample], Sequence[TrainingExample]]],
                       cfg: TrainConfig) -> dict[str, FinetuneResult]:
    """Alternate batches of several tasks on one model; select per task.

    Each task gets its own copy of the model restored to the epoch where that
    task's dev perplexity was lowest.
    """
    cfg.validate()
    names = sorted(tasks)
    for t in names:
        if not tasks[t][0] or not tasks[t][1]:
            raise ValueError(f"task {t!r} needs non-empty train and dev sets")
    opt = _prepare(model, [TASK_HEADS[t] for t in names], cfg)
    rng = np.random.default_rng([cfg.seed, 23])
    traces: dict[str, list[EpochRecord]] = {t: [] for t in names}
    best: dict[str, tuple[float, dict]] = {t: (math.inf, {}) for t in names}
    for epoch in range(1, cfg.epochs + 1):
        queues = {}
        for t in names:
            train = tasks[t][0]
            order = rng.permutation(len(train))
            queues[t] = [[train[k] for k in order[i:i + cfg.batch_size]] for i in range(0, len(train), cfg.batch_size)]
        losses: dict[str, list[float]] = {t: [] for t in names}
        for i in range(max(len(q) for q in queues.values())):
            for t in names:
                if i < len(queues[t]):
                    losses[t].append(_train_batch(model, opt, queues[t][i], TASK_HEADS[t]))
        for t in names:
            metrics = evaluate(model, tasks[t][1], t)
            _check_dev(metrics, epoch)
            traces[t].append(EpochRecord(epoch, float(np.mean(losses[t])), metrics))
            if metrics.perplexity < best[t][0]:
                best[t] = (metrics.perplexity, {n: model[n].data.copy() for n in opt.names})
    out = {}
    for t in names:
        m = model.copy()
        m.restore(best[t][1])
        out[t] = FinetuneResult(m, traces[t], *select_epochs(traces[t]))
    return out
