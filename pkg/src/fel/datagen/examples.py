"""Multitask training records, task encoders, and the pretraining data source."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..tensor import IGNORE_INDEX
from ..tokenizer import CLS_ID, N_SPECIAL, SEP_ID, TokenSeq, Vocab, segment_sample, segment_viterbi
from .acronyms import ADExample, GenerationError, gen_pad_example
from .boundary import encode_boundary_labels
from .lm import NSPIndex, make_nsp_pair, pack_pair, pack_single, weighted_mask
from .markup import WEB, WIKI, Chunk, Document, chunks
from .synthetic import CTExample

HEADS = ("mlm", "nsp", "boundary", "pad")
OBJECTIVE_HEADS = {"MLM": "mlm", "NSP": "nsp", "HYP": "boundary", "PAD": "pad"}
OBJECTIVES = tuple(OBJECTIVE_HEADS)


@dataclass
class TrainingExample:
    ids: list[int]
    segment_ids: list[int]
    objective_mask: list[str]
    mlm_positions: list[int] | None = None
    mlm_labels: list[int] | None = None
    nsp_label: int | None = None
    boundary_labels: list[int] | None = None
    pad_label: int | None = None

    def validate(self, max_seq_len: int) -> None:
        n = len(self.ids)
        if n > max_seq_len:
            raise ValueError(f"example of length {n} exceeds max_seq_len {max_seq_len}")
        if not self.ids or self.ids[0] != CLS_ID or self.ids[-1] != SEP_ID:
            raise ValueError("example must start with [CLS] and end with [SEP]")
        if len(self.segment_ids) != n:
            raise ValueError("segment_ids length mismatch")
        for head in self.objective_mask:
            if head not in HEADS:
                raise ValueError(f"unknown head {head!r}")
            if not self.has_labels(head):
                raise ValueError(f"objective_mask names {head!r} but its labels are missing")
        if self.mlm_positions:
            if len(self.mlm_positions) != len(self.mlm_labels):
                raise ValueError("mlm_positions and mlm_labels differ in length")
            if any(lab < N_SPECIAL for lab in self.mlm_labels):
                raise ValueError("mlm position covers a special token")
        if self.boundary_labels is not None and len(self.boundary_labels) != n:
            raise ValueError("boundary_labels length mismatch")

    def has_labels(self, head: str) -> bool:
        if head == "mlm":
            return bool(self.mlm_positions) and self.mlm_labels is not None
        if head == "nsp":
            return self.nsp_label is not None
        if head == "boundary":
            return self.boundary_labels is not None
        return self.pad_label is not None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TrainingExample":
        return cls(**json.loads(line))


def write_jsonl(path, records: Iterable) -> None:
    lines = []
    for r in records:
        if isinstance(r, TrainingExample):
            lines.append(r.to_json())
        else:
            rec = r.to_record() if hasattr(r, "to_record") else r
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    Path(path).write_bytes(("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def read_training_examples(path) -> list[TrainingExample]:
    return [TrainingExample(**r) for r in read_jsonl(path)]


def read_task_records(path):
    """CT records carry ``query``/``spans``; AD records ``acronym``/``snippet``/``label``."""
    out = []
    for rec in read_jsonl(path):
        if "query" in rec:
            out.append(CTExample.from_record(rec))
        elif "acronym" in rec:
            out.append(ADExample(rec["acronym"], rec["snippet"], int(rec["label"])))
        else:
            raise ValueError(f"unrecognised record keys {sorted(rec)}")
    return out


# ---------------------------------------------------------------- task encoders

def encode_ct(example: CTExample, vocab: Vocab, max_seq_len: int) -> TrainingExample:
    """``[CLS] query [SEP]`` with per-token boundary labels."""
    toks = segment_viterbi(example.query, vocab)
    labels = encode_boundary_labels(toks, example.spans)[: max_seq_len - 2]
    ids = pack_single(toks.ids, max_seq_len)
    return TrainingExample(ids=ids, segment_ids=[0] * len(ids), objective_mask=["boundary"],
                           boundary_labels=[IGNORE_INDEX, *labels, IGNORE_INDEX])


def encode_ad(example: ADExample, vocab: Vocab, max_seq_len: int,
              snippet_tokens: TokenSeq | None = None) -> TrainingExample:
    """``[CLS] acronym [SEP] snippet [SEP]`` supervising the binary CLS head."""
    acr = segment_viterbi(example.acronym, vocab)
    snip = snippet_tokens or segment_viterbi(example.snippet, vocab)
    ids, segs, _ = pack_pair(acr.ids, snip.ids, max_seq_len)
    return TrainingExample(ids=ids, segment_ids=segs, objective_mask=["pad"], pad_label=int(example.label))


def encode_task(examples: Sequence, task: str, vocab: Vocab, max_seq_len: int) -> list[TrainingExample]:
    if task == "ct":
        return [encode_ct(x, vocab, max_seq_len) for x in examples]
    if task == "ad":
        return [encode_ad(x, vocab, max_seq_len) for x in examples]
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------- pretraining data

@dataclass
class _TokChunk:
    chunk: Chunk
    tokens: TokenSeq  # Viterbi segmentation


@dataclass
class PretrainData:
    """Pretraining examples routed into objective buckets.

    MLM+NSP pairs are drawn on the fly from both streams (web chunks are
    re-segmented by sampling each time).  Hyperlink examples come from wiki
    chunks and PAD examples from both streams; both are generated once, with
    a per-document seed.
    """
    documents: list[Document]
    vocab: Vocab
    max_seq_len: int = 128
    seed: int = 0
    alpha: float = 0.2
    mask_rate: float = 0.15
    mask_exponent: float = -0.5
    by_doc: list[list[_TokChunk]] = field(init=False)
    freqs: np.ndarray = field(init=False)
    hyp_examples: list[TrainingExample] = field(init=False)
    pad_examples: list[TrainingExample] = field(init=False)
    nsp_index: NSPIndex = field(init=False)

    def __post_init__(self):
        self.by_doc = [[_TokChunk(c, segment_viterbi(c.text, self.vocab)) for c in chunks(d)] for d in self.documents]
        counts = Counter(t for doc in self.by_doc for tc in doc for t in tc.tokens.ids)
        self.freqs = np.ones(len(self.vocab), dtype=np.float64)
        for t, c in counts.items():
            self.freqs[t] = c
        self.nsp_index = NSPIndex.build(self.by_doc)
        self.hyp_examples = self._gen_hyp()
        self.pad_examples = self._gen_pad()

    def _doc_rng(self, doc_id: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, purpose, doc_id])

    def _segment(self, tc: _TokChunk, rng) -> TokenSeq:
        if tc.chunk.stream == WEB:
            return segment_sample(tc.chunk.text, self.vocab, self.alpha, rng)
        return tc.tokens

    def _gen_hyp(self) -> list[TrainingExample]:
        out = []
        for doc in self.by_doc:
            for tc in doc:
                if tc.chunk.stream != WIKI:
                    continue
                try:
                    labels = encode_boundary_labels(tc.tokens, tc.chunk.spans)
                except ValueError:
                    continue
                ids = pack_single(tc.tokens.ids, self.max_seq_len)
                labels = [IGNORE_INDEX, *labels[: len(ids) - 2], IGNORE_INDEX]
                out.append(TrainingExample(ids=ids, segment_ids=[0] * len(ids), objective_mask=["boundary"],
                                           boundary_labels=labels))
        return out

    def _gen_pad(self) -> list[TrainingExample]:
        flat = [tc for doc in self.by_doc for tc in doc]
        out = []
        for d, doc in enumerate(self.by_doc):
            rng = self._doc_rng(d, 7)
            for tc in doc:
                if len(tc.chunk.text.split()) < 6:
                    continue
                other = flat[rng.integers(len(flat))]
                try:
                    pair = gen_pad_example(tc.chunk.text, other.chunk.text, rng)
                except GenerationError:
                    continue
                snip = self._segment(tc, rng)
                for ex in (pair.positive, pair.negative):
                    acr = segment_viterbi(ex.acronym, self.vocab)
                    ids, segs, _ = pack_pair(acr.ids, snip.ids, self.max_seq_len)
                    out.append(TrainingExample(ids=ids, segment_ids=segs, objective_mask=["pad"],
                                               pad_label=ex.label))
        return out

    def mlm_nsp_example(self, rng: np.random.Generator, heads=("mlm", "nsp")) -> TrainingExample:
        a, b, label = make_nsp_pair(self.by_doc, rng, self.nsp_index)
        ta, tb = self._segment(a, rng), self._segment(b, rng)
        ids, segs, _ = pack_pair(ta.ids, tb.ids, self.max_seq_len)
        masked = weighted_mask(ids, self.freqs, self.mask_rate, rng, len(self.vocab),
                               self.mask_exponent, force_one=True)
        return TrainingExample(ids=masked.corrupted_ids, segment_ids=segs, objective_mask=list(heads),
                               mlm_positions=masked.positions, mlm_labels=masked.labels, nsp_label=label)

    def bucket_sizes(self) -> dict[str, int]:
        return {"hyp": len(self.hyp_examples), "pad": len(self.pad_examples)}


class BucketSampler:
    """Endless batches for each objective bucket, deterministic given a seed."""

    def __init__(self, data: PretrainData, objectives: Sequence[str], seed: int):
        unknown = set(objectives) - set(OBJECTIVES)
        if unknown:
            raise ValueError(f"unknown objectives {sorted(unknown)}")
        if not objectives:
            raise ValueError("empty objective set")
        self.data = data
        self.objectives = [o for o in OBJECTIVES if o in objectives]
        self.rng = np.random.default_rng([seed, 11])
        lm_heads = tuple(OBJECTIVE_HEADS[o] for o in ("MLM", "NSP") if o in objectives)
        self.buckets: list[str] = []
        if lm_heads:
            self.buckets.append("mlm_nsp")
        self.lm_heads = lm_heads
        self._pools: dict[str, list[TrainingExample]] = {}
        if "HYP" in objectives:
            self._pools["hyp"] = data.hyp_examples
            self.buckets.append("hyp")
        if "PAD" in objectives:
            self._pools["pad"] = data.pad_examples
            self.buckets.append("pad")
        for name, pool in self._pools.items():
            if not pool:
                raise ValueError(f"objective bucket {name!r} has no examples")
        self._order = {k: np.array([], dtype=np.int64) for k in self._pools}
        self._cursor = {k: 0 for k in self._pools}

    def bucket_for_step(self, step: int) -> str:
        return self.buckets[step % len(self.buckets)]

    def batch(self, bucket: str, size: int) -> list[TrainingExample]:
        if bucket == "mlm_nsp":
            return [self.data.mlm_nsp_example(self.rng, self.lm_heads) for _ in range(size)]
        pool = self._pools[bucket]
        out = []
        while len(out) < size:
            if self._cursor[bucket] >= self._order[bucket].size:
                self._order[bucket] = self.rng.permutation(len(pool))
                self._cursor[bucket] = 0
            out.append(pool[self._order[bucket][self._cursor[bucket]]])
            self._cursor[bucket] += 1
        return out
