"""Pseudo acronym detection (pretraining) and acronym detection (finetuning) data."""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

MIN_SPAN, MAX_SPAN = 2, 6
MAX_TRIES = 100
ALPHABET = string.ascii_lowercase


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ADExample:
    acronym: str
    snippet: str
    label: int

    def to_record(self) -> dict:
        return {"acronym": self.acronym, "snippet": self.snippet, "label": self.label}


@dataclass(frozen=True)
class PADPair:
    positive: ADExample
    negative: ADExample
    span: tuple[int, int]          # unigram index range behind the positive
    negative_method: str           # "mutate" | "other_chunk"


def initials(words) -> str:
    words = list(words)
    if not MIN_SPAN <= len(words) <= MAX_SPAN:
        raise ValueError(f"acronym spans need {MIN_SPAN}-{MAX_SPAN} unigrams, got {len(words)}")
    if any(not w for w in words):
        raise ValueError("empty unigram")
    return "".join(w[0] for w in words)


def has_accidental_match(acronym: str, chunk: str) -> bool:
    """True iff some run of 2-6 consecutive unigrams in ``chunk`` has these initials."""
    words = chunk.split()
    for length in range(MIN_SPAN, MAX_SPAN + 1):
        for i in range(len(words) - length + 1):
            if "".join(w[0] for w in words[i:i + length]) == acronym:
                return True
    return False


def appears_verbatim(acronym: str, snippet: str) -> bool:
    return acronym in snippet.split()


def mutate(acronym: str, rng: np.random.Generator) -> str:
    """Replace m ~ Uniform{1..len} distinct letters, each by a different a-z letter."""
    letters = list(acronym)
    m = int(rng.integers(1, len(letters) + 1))
    for k in rng.choice(len(letters), size=m, replace=False):
        choices = [c for c in ALPHABET if c != letters[k]]
        letters[k] = choices[rng.integers(len(choices))]
    return "".join(letters)


def random_span(n_words: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform over every (start, length) with 2 <= length <= 6 that fits."""
    options = [(i, i + k) for k in range(MIN_SPAN, min(MAX_SPAN, n_words) + 1) for i in range(n_words - k + 1)]
    if not options:
        raise GenerationError(f"a chunk of {n_words} unigrams has no 2-unigram span")
    return options[rng.integers(len(options))]


def gen_pad_example(chunk: str, other_chunk: str, rng: np.random.Generator) -> PADPair:
    words = chunk.split()
    if len(words) < MAX_SPAN:
        raise GenerationError(f"chunk has {len(words)} unigrams, need at least {MAX_SPAN}")
    for _ in range(MAX_TRIES):
        span = random_span(len(words), rng)
        acronym = initials(words[span[0]:span[1]])
        if not appears_verbatim(acronym, chunk):
            break
    else:
        raise GenerationError("could not draw a positive that is absent from the chunk")

    other_words = other_chunk.split()
    for _ in range(MAX_TRIES):
        if rng.random() < 0.5 or len(other_words) < MIN_SPAN:
            method, candidate = "mutate", mutate(acronym, rng)
        else:
            s, e = random_span(len(other_words), rng)
            method, candidate = "other_chunk", initials(other_words[s:e])
        if not has_accidental_match(candidate, chunk) and not appears_verbatim(candidate, chunk):
            break
    else:
        raise GenerationError(f"{MAX_TRIES} consecutive negatives matched the chunk")
    return PADPair(ADExample(acronym, chunk, 1), ADExample(candidate, chunk, 0), span, method)


def gen_ad_finetune_example(snippet: str, entity_span: tuple[int, int], known_acronym: str,
                            rng: np.random.Generator) -> tuple[ADExample, ADExample]:
    """One positive (the known acronym) and one filtered negative for a snippet.

    ``entity_span`` is a unigram index range.  Negatives are either the
    initials of a random span of the snippet or a mutation of the known
    acronym; neither may equal the entity's initials or appear in the snippet,
    and mutations must match no 2-6 unigram span at all.
    """
    words = snippet.split()
    s, e = entity_span
    if not 0 <= s < e <= len(words):
        raise ValueError(f"entity span {entity_span} outside snippet of {len(words)} unigrams")
    if appears_verbatim(known_acronym, snippet):
        raise ValueError(f"acronym {known_acronym!r} appears verbatim in the snippet")
    entity_initials = "".join(w[0] for w in words[s:e])
    for _ in range(MAX_TRIES):
        if rng.random() < 0.5:
            a, b = random_span(len(words), rng)
            method, candidate = "span", initials(words[a:b])
        else:
            method, candidate = "mutate", mutate(known_acronym, rng)
        if candidate in (entity_initials, known_acronym) or appears_verbatim(candidate, snippet):
            continue
        if method == "mutate" and has_accidental_match(candidate, snippet):
            continue
        return ADExample(known_acronym, snippet, 1), ADExample(candidate, snippet, 0)
    raise GenerationError(f"no acceptable negative for {known_acronym!r} after {MAX_TRIES} tries")
