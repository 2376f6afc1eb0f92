"""Cross-validation and the pretraining-objective comparison harness."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .datagen.acronyms import ADExample
from .datagen.examples import encode_task
from .datagen.synthetic import CTExample, shared_unigrams
from .model import Model
from .tokenizer import Vocab
from .train import Metrics, evaluate, finetune

SPLIT_MODES = ("standard", "ct_disjoint")


class DisjointnessError(ValueError):
    pass


@dataclass
class RunResult:
    fold: int
    seed: int
    test: Metrics
    best_epoch: int
    best_accuracy_epoch: int
    n_train: int
    n_dev: int

    def to_dict(self) -> dict:
        return {"fold": self.fold, "seed": self.seed, "test": self.test.to_dict(), "best_epoch": self.best_epoch,
                "best_accuracy_epoch": self.best_accuracy_epoch, "n_train": self.n_train, "n_dev": self.n_dev}


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


@dataclass
class CVReport:
    runs: list[RunResult]
    task: str
    split_mode: str

    @property
    def accuracies(self) -> list[float]:
        return [r.test.accuracy for r in self.runs]

    @property
    def perplexities(self) -> list[float]:
        return [r.test.perplexity for r in self.runs]

    @property
    def accuracy(self) -> tuple[float, float]:
        return mean_std(self.accuracies)

    @property
    def perplexity(self) -> tuple[float, float]:
        return mean_std(self.perplexities)

    def to_dict(self) -> dict:
        (am, asd), (pm, psd) = self.accuracy, self.perplexity
        return {"task": self.task, "split_mode": self.split_mode, "runs": [r.to_dict() for r in self.runs],
                "aggregate": {"n_runs": len(self.runs), "accuracy_mean": am, "accuracy_std": asd,
                              "perplexity_mean": pm, "perplexity_std": psd}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _text(example) -> str:
    return example.query if isinstance(example, CTExample) else example.snippet


def _canonical(records: Sequence) -> list:
    return sorted(records, key=lambda r: json.dumps(r.to_record(), sort_keys=True))


def check_split(train_texts: Sequence[str], test_texts: Sequence[str]) -> None:
    shared = shared_unigrams(train_texts, test_texts)
    if shared:
        listed = ", ".join(sorted(shared)[:10])
        more = f" (+{len(shared) - 10} more)" if len(shared) > 10 else ""
        raise DisjointnessError(f"train and test share non-stopword unigrams: {listed}{more}")


def make_splits(n: int, k: int, seed: int, split_mode: str, train_size: int | None = None):
    """Yield ``(fold, train_idx, dev_idx, test_idx)``; ``test_idx`` is None in ct_disjoint mode.

    ct_disjoint: each fold is an independent random sample of ``train_size``
    from the pool, dev is the rest of the pool.  standard: fold ``i`` is the
    test fold; a ``1/k`` share of the remaining examples is dev and the rest
    train (optionally cut to ``train_size``).
    """
    if split_mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {split_mode!r}")
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"dataset of {n} examples cannot be split into {k} folds")
    if split_mode == "ct_disjoint":
        size = train_size if train_size is not None else n
        if not 1 <= size < n:
            raise ValueError(f"train_size {size} leaves no dev examples in a pool of {n}")
        for fold in range(k):
            order = np.random.default_rng([seed, 31, fold]).permutation(n)
            yield fold, np.sort(order[:size]), np.sort(order[size:]), None
        return
    folds = np.array_split(np.random.default_rng([seed, 37]).permutation(n), k)
    for fold in range(k):
        test = folds[fold]
        rest = np.random.default_rng([seed, 43, fold]).permutation(
            np.concatenate([f for j, f in enumerate(folds) if j != fold]))
        if rest.size < 2:
            raise ValueError("too few examples outside the test fold for train and dev")
        n_dev = max(1, rest.size // k)
        dev, train = rest[:n_dev], rest[n_dev:]
        if train_size is not None:
            if train_size > train.size:
                raise ValueError(f"train_size {train_size} exceeds the {train.size} training examples of a fold")
            train = train[:train_size]
        yield fold, np.sort(train), np.sort(dev), np.sort(test)


def cross_validate(model: Model, vocab: Vocab, dataset: Sequence, task: str, k: int, seeds: Sequence[int],
                   cfg: TrainConfig, split_mode: str = "standard", test_set: Sequence | None = None,
                   train_size: int | None = None) -> CVReport:
    """Finetune a copy of ``model`` for every (fold, seed) and score it on test data.

    In ct_disjoint mode ``test_set`` is the fixed held-out set and must share
    no non-stopword unigram with any training sample.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    if split_mode == "ct_disjoint" and not test_set:
        raise ValueError("ct_disjoint mode needs a held-out test set")
    data = _canonical(dataset)
    encoded = encode_task(data, task, vocab, model.cfg.max_seq_len)
    fixed_test = None
    if split_mode == "ct_disjoint":
        test_records = _canonical(test_set)
        fixed_test = encode_task(test_records, task, vocab, model.cfg.max_seq_len)
        test_texts = [_text(x) for x in test_records]
    runs = []
    for seed in seeds:
        for fold, tr, dv, te in make_splits(len(data), k, seed, split_mode, train_size):
            if fixed_test is not None:
                check_split([_text(data[i]) for i in tr], test_texts)
                test = fixed_test
            else:
                test = [encoded[i] for i in te]
            m = model.copy()
            res = finetune(m, [encoded[i] for i in tr], [encoded[i] for i in dv], task, replace(cfg, seed=seed))
            runs.append(RunResult(fold, seed, evaluate(m, test, task), res.best_epoch, res.best_accuracy_epoch,
                                  len(tr), len(dv)))
    return CVReport(runs, task, split_mode)


# ---------------------------------------------------------------- arm comparison

@dataclass
class ArmComparison:
    arm_a: str
    arm_b: str
    size: int
    mean_a: float
    mean_b: float
    pooled_sigma: float

    @property
    def diff(self) -> float:
        return self.mean_a - self.mean_b

    @property
    def separated(self) -> bool:
        """Mean difference exceeds one pooled standard deviation."""
        return self.diff > self.pooled_sigma


def pooled_sigma(sd_a: float, sd_b: float) -> float:
    return math.sqrt((sd_a ** 2 + sd_b ** 2) / 2.0)


@dataclass
class AlignmentReport:
    grid: dict[str, dict[int, CVReport]]
    budgets: dict[str, int]
    comparisons: list[ArmComparison] = field(default_factory=list)

    def mean_accuracy(self, arm: str, size: int) -> float:
        return self.grid[arm][size].accuracy[0]

    def comparison(self, arm_a: str, arm_b: str, size: int) -> ArmComparison:
        for c in self.comparisons:
            if (c.arm_a, c.arm_b, c.size) == (arm_a, arm_b, size):
                return c
        raise KeyError((arm_a, arm_b, size))

    def to_tsv(self) -> str:
        lines = ["arm_a\tarm_b\tsize\tmean_a\tmean_b\tdiff\tpooled_sigma"]
        for c in self.comparisons:
            lines.append(f"{c.arm_a}\t{c.arm_b}\t{c.size}\t{c.mean_a!r}\t{c.mean_b!r}\t{c.diff!r}\t{c.pooled_sigma!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"budgets": self.budgets,
                "grid": {arm: {str(s): r.to_dict() for s, r in by_size.items()} for arm, by_size in self.grid.items()}}


def compare_arms(grid: dict[str, dict[int, CVReport]], budgets: dict[str, int]) -> AlignmentReport:
    """Pairwise mean-accuracy differences between arms at every finetune size."""
    if len(set(budgets.values())) > 1:
        raise ValueError(f"arms have mismatched pretraining budgets: {budgets}")
    report = AlignmentReport(grid, budgets)
    arms = list(grid)
    for a in arms:
        for b in arms:
            for size in sorted(grid[a]):
                if size not in grid[b]:
                    continue
                (ma, sa), (mb, sb) = grid[a][size].accuracy, grid[b][size].accuracy
                report.comparisons.append(ArmComparison(a, b, size, ma, mb, pooled_sigma(sa, sb)))
    return report
