"""Unigram subword tokenizer with Viterbi and sampled segmentation.

Text is lower-cased and pre-split on whitespace: pieces never span a space and
every whitespace character becomes its own single-character piece.  Words are
segmented independently over a lattice of vocabulary pieces.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(len(SPECIALS))
N_SPECIAL = len(SPECIALS)

HEADER_PREFIX = "#unigram-vocab v1 size="

# score of a character the vocabulary has never seen, relative to the rarest piece
_UNK_PENALTY = 10.0
_TIE_TOL = 1e-12


class VocabError(ValueError):
    pass


def normalize(text: str) -> str:
    return text.lower()


@dataclass(frozen=True)
class TokenSeq:
    text: str
    ids: tuple[int, ...]
    pieces: tuple[str, ...]
    offsets: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ids)


def _split_words(text: str) -> list[tuple[int, int]]:
    """Character ranges of non-whitespace runs and of single whitespace chars."""
    out = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            out.append((i, i + 1))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        out.append((i, j))
        i = j
    return out


class Vocab:
    """Piece inventory with log-probabilities; ids are specials then pieces by
    descending probability, ties broken lexicographically."""

    def __init__(self, log_probs: dict[str, float]):
        for piece, lp in log_probs.items():
            if piece in SPECIALS:
                raise VocabError(f"piece {piece!r} collides with a special token")
            if not piece:
                raise VocabError("empty piece")
            if not math.isfinite(lp) or lp > 0:
                raise VocabError(f"log-probability of {piece!r} must be finite and <= 0, got {lp}")
        ordered = sorted(log_probs.items(), key=lambda kv: (-kv[1], kv[0]))
        self.pieces: list[str] = list(SPECIALS) + [p for p, _ in ordered]
        self.log_probs: dict[str, float] = dict(ordered)
        self.piece_to_id: dict[str, int] = {p: i for i, p in enumerate(self.pieces)}
        self.char_set: frozenset[str] = frozenset(p for p in log_probs if len(p) == 1)
        missing = {c for p in log_probs for c in p} - self.char_set
        if missing:
            raise VocabError(f"characters {sorted(missing)} appear in pieces but are not pieces themselves")
        self.max_piece_len = max((len(p) for p in log_probs), default=1)
        self.unk_log_prob = (min(log_probs.values()) if log_probs else 0.0) - _UNK_PENALTY
        self._viterbi_cache: dict[str, tuple[tuple[int, int, int], ...]] = {}

    def __len__(self) -> int:
        return len(self.pieces)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.pieces == other.pieces and self.log_probs == other.log_probs

    @property
    def size(self) -> int:
        return len(self.pieces)

    def id_of(self, piece: str) -> int:
        return self.piece_to_id.get(piece, UNK_ID)

    def piece_score(self, piece: str) -> float:
        return self.log_probs.get(piece, self.unk_log_prob)

    # ---------------------------------------------------------------- file format

    def to_text(self) -> str:
        lines = [f"{HEADER_PREFIX}{len(self.pieces)}"]
        lines += [f"{_escape(p)}\t-inf" for p in SPECIALS]
        lines += [f"{_escape(p)}\t{lp!r}" for p, lp in self.log_probs.items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_text().encode("utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith(HEADER_PREFIX):
            raise VocabError("missing '#unigram-vocab v1' header")
        try:
            size = int(lines[0][len(HEADER_PREFIX):])
        except ValueError:
            raise VocabError(f"bad header {lines[0]!r}") from None
        body = lines[1:]
        if len(body) != size:
            raise VocabError(f"header says {size} entries, file has {len(body)}")
        entries = []
        for k, line in enumerate(body, start=2):
            piece, sep, lp = line.rpartition("\t")
            if not sep:
                raise VocabError(f"line {k}: expected piece<TAB>log_prob")
            entries.append((_unescape(piece), float(lp)))
        if tuple(p for p, _ in entries[:N_SPECIAL]) != SPECIALS:
            raise VocabError("special tokens missing or out of order")
        vocab = cls(dict(entries[N_SPECIAL:]))
        if vocab.pieces != [p for p, _ in entries]:
            raise VocabError("piece order in file is not canonical")
        return vocab

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _escape(piece: str) -> str:
    return piece.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(piece: str) -> str:
    out, i = [], 0
    while i < len(piece):
        c = piece[i]
        if c == "\\" and i + 1 < len(piece):
            nxt = piece[i + 1]
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


# ---------------------------------------------------------------- building

def build_vocab(corpus: Iterable[str], target_size: int, max_piece_len: int = 8, min_count: int = 2) -> Vocab:
    """Frequency-ranked substring vocabulary.

    Candidates are all within-word substrings up to ``max_piece_len`` seen at
    least ``min_count`` times, plus every character.  Each kept piece gets
    ``ln(count / total)`` with ``total`` summed over the kept pieces.
    """
    words: Counter[str] = Counter()
    chars: Counter[str] = Counter()
    any_text = False
    for text in corpus:
        text = normalize(text)
        if not text:
            continue
        any_text = True
        for s, e in _split_words(text):
            if text[s].isspace():
                chars[text[s]] += 1
            else:
                words[text[s:e]] += 1
    if not any_text:
        raise VocabError("empty corpus")

    subs: Counter[str] = Counter()
    for word, freq in words.items():
        n = len(word)
        for i in range(n):
            chars[word[i]] += freq
            for j in range(i + 2, min(n, i + max_piece_len) + 1):
                subs[word[i:j]] += freq

    slots = target_size - N_SPECIAL - len(chars)
    if slots < 0:
        raise VocabError(f"target_size {target_size} is below {len(chars)} characters + {N_SPECIAL} specials")
    ranked = sorted(((p, c) for p, c in subs.items() if c >= min_count), key=lambda pc: (-pc[1], pc[0]))
    kept = dict(chars)
    kept.update(ranked[:slots])
    total = sum(kept.values())
    return Vocab({p: math.log(c / total) for p, c in kept.items()})


# ---------------------------------------------------------------- segmentation

def _candidates(word: str, vocab: Vocab, i: int):
    """(end, piece-or-None, score) for every lattice edge leaving position i."""
    lim = min(len(word), i + vocab.max_piece_len)
    edges = []
    for j in range(lim, i, -1):
        piece = word[i:j]
        lp = vocab.log_probs.get(piece)
        if lp is not None:
            edges.append((j, piece, lp))
    if word[i] not in vocab.char_set:
        edges.append((i + 1, None, vocab.unk_log_prob))
    return edges


def _viterbi_word(word: str, vocab: Vocab) -> tuple[tuple[int, int, int], ...]:
    """Best segmentation of one word as (start, end, id) triples.

    Solved right-to-left so that, among equal-score equal-length paths, the
    one with the longest leftmost piece wins.
    """
    cached = vocab._viterbi_cache.get(word)
    if cached is not None:
        return cached
    n = len(word)
    best_score = [0.0] * (n + 1)
    best_count = [0] * (n + 1)
    best_next: list[tuple[int, int] | None] = [None] * (n + 1)
    for i in range(n - 1, -1, -1):
        bs, bc, bn = -math.inf, 0, None
        for j, piece, lp in _candidates(word, vocab, i):  # longest first
            s = lp + best_score[j]
            c = 1 + best_count[j]
            if s > bs + _TIE_TOL or (abs(s - bs) <= _TIE_TOL and c < bc):
                bs, bc, bn = s, c, (j, vocab.piece_to_id[piece] if piece is not None else UNK_ID)
        best_score[i], best_count[i], best_next[i] = bs, bc, bn
    out, i = [], 0
    while i < n:
        j, pid = best_next[i]
        out.append((i, j, pid))
        i = j
    result = tuple(out)
    vocab._viterbi_cache[word] = result
    return result


def _logsumexp(xs: list[float]) -> float:
    top = max(xs)
    if top == -math.inf:
        return top
    return top + math.log(sum(math.exp(x - top) for x in xs))


def _sample_word(word: str, vocab: Vocab, alpha: float, rng: np.random.Generator):
    n = len(word)
    incoming: list[list[tuple[int, int, float]]] = [[] for _ in range(n + 1)]
    for i in range(n):
        for j, piece, lp in _candidates(word, vocab, i):
            incoming[j].append((i, vocab.piece_to_id[piece] if piece is not None else UNK_ID, alpha * lp))
    log_fwd = [0.0] + [-math.inf] * n
    for j in range(1, n + 1):
        log_fwd[j] = _logsumexp([log_fwd[i] + w for i, _, w in incoming[j]])
    out = []
    j = n
    while j > 0:
        edges = incoming[j]
        logits = [log_fwd[i] + w for i, _, w in edges]
        top = max(logits)
        cum = np.cumsum([math.exp(x - top) for x in logits])
        k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(edges) - 1)
        i, pid, _ = edges[k]
        out.append((i, j, pid))
        j = i
    out.reverse()
    return out


def _assemble(text: str, vocab: Vocab, word_fn) -> TokenSeq:
    ids, pieces, offsets = [], [], []
    for s, e in _split_words(text):
        for a, b, pid in word_fn(text[s:e]):
            ids.append(pid)
            pieces.append(text[s + a:s + b])
            offsets.append((s + a, s + b))
    return TokenSeq(text, tuple(ids), tuple(pieces), tuple(offsets))


def segment_viterbi(text: str, vocab: Vocab) -> TokenSeq:
    """Most probable segmentation; ties go to fewer pieces, then leftmost-longest."""
    if not text:
        raise ValueError("cannot segment empty text")
    text = normalize(text)
    return _assemble(text, vocab, lambda w: _viterbi_word(w, vocab))


def segment_sample(text: str, vocab: Vocab, alpha: float, rng: np.random.Generator) -> TokenSeq:
    """Segmentation drawn with probability proportional to prod(p(piece))**alpha."""
    if not text:
        raise ValueError("cannot segment empty text")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    text = normalize(text)
    return _assemble(text, vocab, lambda w: _sample_word(w, vocab, alpha, rng))


def segmentation_score(seq: TokenSeq, vocab: Vocab) -> float:
    return sum(vocab.unk_log_prob if i == UNK_ID else vocab.log_probs[p] for i, p in zip(seq.ids, seq.pieces))
