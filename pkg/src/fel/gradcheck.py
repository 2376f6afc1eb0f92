"""Finite-difference check of the full model on a tiny double-precision batch."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .datagen.examples import HEADS, TrainingExample
from .model import collate, forward, init_model
from .tensor import IGNORE_INDEX, GradCheckReport, check_gradients
from .tokenizer import CLS_ID, N_SPECIAL, SEP_ID

TOY_CONFIG = ModelConfig(vocab_size=23, emb_dim=16, n_layers=1, head_dim=8, ffn_dim=32, max_seq_len=6,
                         dropout=0.0, init_std=0.5, dtype="float64")


@dataclass
class GradCheckResult:
    report: GradCheckReport
    heads: tuple[str, ...]
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    @property
    def max_rel_err(self) -> float:
        return self.report.max_rel_err


def toy_batch(cfg: ModelConfig, rng: np.random.Generator) -> list[TrainingExample]:
    """Two examples, the second shorter so padding is exercised."""
    out = []
    for n in (cfg.max_seq_len, cfg.max_seq_len - 2):
        body = [int(t) for t in rng.integers(N_SPECIAL, cfg.vocab_size, size=n - 2)]
        ids = [CLS_ID, *body, SEP_ID]
        split = n // 2
        segs = [0] * split + [1] * (n - split)
        boundary = [IGNORE_INDEX] + [int(t) for t in rng.integers(0, 4, size=n - 2)] + [IGNORE_INDEX]
        out.append(TrainingExample(
            ids=ids, segment_ids=segs, objective_mask=list(HEADS),
            mlm_positions=[1, n - 2], mlm_labels=[ids[1], ids[n - 2]],
            nsp_label=int(rng.integers(2)), boundary_labels=boundary, pad_label=int(rng.integers(2))))
    return out


def grad_check(cfg: ModelConfig | None = None, seed: int = 0, heads: Sequence[str] = HEADS,
               tol: float = 1e-4, h: float = 1e-5) -> GradCheckResult:
    cfg = replace(cfg or TOY_CONFIG, dtype="float64", dropout=0.0)
    rng = np.random.default_rng([seed, 303])
    model = init_model(cfg, seed)
    batch = collate(toy_batch(cfg, rng), heads, cfg.max_seq_len)
    start = time.perf_counter()
    report = check_gradients(lambda: forward(model, batch, heads, "eval").total,
                             list(model.params.values()), tol=tol, h=h)
    return GradCheckResult(report, tuple(heads), time.perf_counter() - start)
