"""Rarity-weighted MLM masking and next-sentence pairs."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..tensor import IGNORE_INDEX
from ..tokenizer import CLS_ID, MASK_ID, N_SPECIAL, SEP_ID


@dataclass
class MaskResult:
    positions: list[int]
    labels: list[int]
    corrupted_ids: list[int]


def mask_weights(ids: Sequence[int], freqs: Mapping[int, float] | np.ndarray, exponent: float = -0.5) -> np.ndarray:
    """Unnormalised selection weight ``freq(token) ** exponent`` per position."""
    if isinstance(freqs, np.ndarray):
        f = freqs[np.asarray(ids, dtype=np.int64)].astype(np.float64)
    else:
        f = np.array([freqs.get(t, 1) for t in ids], dtype=np.float64)
    if (f <= 0).any():
        raise ValueError("token frequencies must be positive")
    return f ** exponent


def inclusion_probabilities(weights: np.ndarray, expected: float) -> np.ndarray:
    """Per-position probabilities proportional to ``weights``, capped at 1,
    summing to ``expected``."""
    n = weights.size
    expected = min(expected, float(n))
    pi = np.zeros(n)
    capped = np.zeros(n, dtype=bool)
    while True:
        free = ~capped
        room = expected - capped.sum()
        wsum = weights[free].sum()
        if room <= 0 or wsum <= 0:
            pi[free] = 0.0
            break
        pi[free] = weights[free] * (room / wsum)
        over = free & (pi > 1.0)
        if not over.any():
            break
        capped |= over
        pi[capped] = 1.0
    pi[capped] = 1.0
    return pi


def systematic_sample(pi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample without replacement with exact inclusion probabilities ``pi``.

    Systematic sampling over a random ordering; the sample size is the floor
    or ceiling of ``pi.sum()``.
    """
    order = rng.permutation(pi.size)
    cum = np.cumsum(pi[order])
    u = rng.random()
    hits = np.floor(cum - u) - np.floor(np.concatenate(([0.0], cum[:-1])) - u)
    return np.sort(order[hits > 0])


def weighted_mask(ids: Sequence[int], freqs, rate: float, rng: np.random.Generator, vocab_size: int,
                  exponent: float = -0.5, force_one: bool = False) -> MaskResult:
    """Select about ``rate`` of the non-special positions, favouring rare tokens.

    Selected positions become [MASK] 80% of the time, a random non-special
    token 10%, and stay unchanged 10%.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must be in (0, 1), got {rate}")
    ids = list(ids)
    maskable = np.array([k for k, t in enumerate(ids) if t >= N_SPECIAL], dtype=np.int64)
    if maskable.size == 0:
        raise ValueError("no maskable positions")
    w = mask_weights([ids[k] for k in maskable], freqs, exponent)
    pi = inclusion_probabilities(w, rate * maskable.size)
    chosen = maskable[systematic_sample(pi, rng)]
    if force_one and chosen.size == 0:
        chosen = np.array([maskable[rng.choice(maskable.size, p=w / w.sum())]])
    corrupted = list(ids)
    labels = []
    for k in chosen:
        labels.append(ids[k])
        u = rng.random()
        if u < 0.8:
            corrupted[k] = MASK_ID
        elif u < 0.9:
            corrupted[k] = int(rng.integers(N_SPECIAL, vocab_size))
    return MaskResult([int(k) for k in chosen], labels, corrupted)


def mlm_label_row(n: int, result: MaskResult) -> list[int]:
    row = [IGNORE_INDEX] * n
    for k, lab in zip(result.positions, result.labels):
        row[k] = lab
    return row


@dataclass(frozen=True)
class NSPIndex:
    adjacent: list[tuple[int, int]]   # (doc, chunk) with a successor in the same doc
    populated: list[int]              # docs with at least one chunk

    @classmethod
    def build(cls, doc_chunks: Sequence[Sequence]) -> "NSPIndex":
        return cls([(d, i) for d, cs in enumerate(doc_chunks) for i in range(len(cs) - 1)],
                   [d for d, cs in enumerate(doc_chunks) if cs])


def make_nsp_pair(doc_chunks: Sequence[Sequence], rng: np.random.Generator, index: NSPIndex | None = None):
    """Pick ``(segA, segB, label)``: label 1 for adjacent chunks of one
    document, label 0 when ``segB`` comes from a different document."""
    index = index or NSPIndex.build(doc_chunks)
    if not index.adjacent or len(index.populated) < 2:
        raise ValueError("need at least two documents and one document with two chunks for NSP")
    d, i = index.adjacent[rng.integers(len(index.adjacent))]
    seg_a = doc_chunks[d][i]
    if rng.random() < 0.5:
        return seg_a, doc_chunks[d][i + 1], 1
    # uniform over the populated documents other than d
    j = int(rng.integers(len(index.populated) - 1))
    if j >= bisect_left(index.populated, d):
        j += 1
    o = index.populated[j]
    return seg_a, doc_chunks[o][rng.integers(len(doc_chunks[o]))], 0


def truncate_pair(a: list, b: list, max_tokens: int) -> tuple[list, list]:
    """Drop tokens from the end of the longer segment until both fit."""
    a, b = list(a), list(b)
    while len(a) + len(b) > max_tokens:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def pack_pair(a_ids, b_ids, max_seq_len: int) -> tuple[list[int], list[int], int]:
    """``[CLS] a [SEP] b [SEP]`` with segment ids; returns (ids, segments, len_a)."""
    a, b = truncate_pair(a_ids, b_ids, max_seq_len - 3)
    ids = [CLS_ID, *a, SEP_ID, *b, SEP_ID]
    segs = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return ids, segs, len(a)


def pack_single(ids_in, max_seq_len: int) -> list[int]:
    return [CLS_ID, *list(ids_in)[: max_seq_len - 2], SEP_ID]
