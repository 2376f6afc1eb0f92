"""Planted-entity synthetic corpus and the CT / AD finetuning sets built on it.

Filler words and entity words are drawn from disjoint syllable inventories,
so an entity is recognisable from its spelling even when the entity itself
was never seen in pretraining.  The entity lexicon is split into a
pretrain-visible half and a finetune-only half sharing no unigrams.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .acronyms import ADExample, appears_verbatim, gen_ad_finetune_example
from .markup import WEB, WIKI

FILLER_ONSETS = "bdfgklmnprst"
ENTITY_ONSETS = "cjqvwxz"
VOWELS = "aeiou"


def load_stopwords() -> frozenset[str]:
    text = resources.files("fel").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


STOPWORDS = load_stopwords()


@dataclass
class CorpusParams:
    n_docs: int = 800
    entity_lexicon_size: int = 400
    doc_len: int = 100
    seed: int = 0
    filler_lexicon_size: int = 600
    web_fraction: float = 0.25
    entity_rate: float = 0.15
    stopword_rate: float = 0.35

    def validate(self) -> None:
        for name in ("n_docs", "entity_lexicon_size", "doc_len", "filler_lexicon_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.entity_lexicon_size < 8:
            raise ValueError("entity lexicon too small to split into pretrain and finetune halves")


@dataclass
class Lexicon:
    fillers: list[str]
    pretrain_entities: list[list[str]]
    finetune_entities: list[list[str]]
    stopwords: list[str] = field(default_factory=lambda: sorted(STOPWORDS))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Lexicon":
        return cls(**json.loads(text))


@dataclass
class SyntheticCorpus:
    documents: list[tuple[str, str]]   # (stream tag, markup)
    lexicon: Lexicon


@dataclass(frozen=True)
class CTExample:
    query: str
    spans: tuple[tuple[int, int], ...]

    def to_record(self) -> dict:
        return {"query": self.query, "spans": [list(s) for s in self.spans]}

    @classmethod
    def from_record(cls, rec: dict) -> "CTExample":
        return cls(rec["query"], tuple(tuple(s) for s in rec["spans"]))


def _make_words(rng, onsets, n, syllables, taken):
    out = []
    while len(out) < n:
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(onsets[rng.integers(len(onsets))] + VOWELS[rng.integers(len(VOWELS))] for _ in range(k))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _make_entities(rng, n, taken) -> list[list[str]]:
    entities = []
    for _ in range(n):
        size = int(rng.choice([1, 2, 3], p=[0.3, 0.45, 0.25]))
        words = _make_words(rng, ENTITY_ONSETS, size, (2, 3), taken)
        if size == 3 and rng.random() < 0.3:
            words[1] = "of"
        entities.append(words)
    return entities


def build_lexicon(params: CorpusParams, rng: np.random.Generator) -> Lexicon:
    taken = set(STOPWORDS)
    fillers = _make_words(rng, FILLER_ONSETS, params.filler_lexicon_size, (1, 3), taken)
    entities = _make_entities(rng, params.entity_lexicon_size, taken)
    half = len(entities) // 2
    return Lexicon(fillers, entities[:half], entities[half:])


def _zipf(n: int) -> np.ndarray:
    p = 1.0 / (np.arange(n) + 10.0)
    return p / p.sum()


class _Sampler:
    def __init__(self, fillers, entities, params: CorpusParams, rng):
        self.fillers = fillers
        self.entities = entities
        self.stop = sorted(STOPWORDS)
        self.p_fill = _zipf(len(fillers))
        self.params = params
        self.rng = rng

    def filler(self) -> str:
        if self.rng.random() < self.params.stopword_rate:
            return self.stop[self.rng.integers(len(self.stop))]
        return self.fillers[self.rng.choice(len(self.fillers), p=self.p_fill)]

    def entity(self) -> list[str]:
        return self.entities[self.rng.integers(len(self.entities))]

    def sentence(self, n_words: int, n_entities: int | None = None):
        """Words plus entity unigram ranges; either a rate or a fixed entity count."""
        units: list[list[str] | str] = []
        count = 0
        if n_entities is None:
            while count < n_words:
                if self.rng.random() < self.params.entity_rate:
                    e = self.entity()
                    units.append(e)
                    count += len(e)
                else:
                    units.append(self.filler())
                    count += 1
        else:
            ents = [self.entity() for _ in range(n_entities)]
            n_fill = max(n_words - sum(len(e) for e in ents), 1)
            units = [self.filler() for _ in range(n_fill)]
            for e in ents:
                units.insert(int(self.rng.integers(len(units) + 1)), e)
        words, spans = [], []
        for u in units:
            if isinstance(u, list):
                spans.append((len(words), len(words) + len(u)))
                words.extend(u)
            else:
                words.append(u)
        return words, spans


def _render(words, spans, markup: bool) -> tuple[str, list[tuple[int, int]]]:
    """Join words; return text (with ``[[ ]]`` when ``markup``) and plain char spans."""
    starts = {s: e for s, e in spans}
    parts, char_spans, pos = [], [], 0
    i = 0
    while i < len(words):
        if parts:
            parts.append(" ")
            pos += 1
        if i in starts:
            e = starts[i]
            phrase = " ".join(words[i:e])
            char_spans.append((pos, pos + len(phrase)))
            parts.append(f"[[{phrase}]]" if markup else phrase)
            pos += len(phrase)
            i = e
        else:
            parts.append(words[i])
            pos += len(words[i])
            i += 1
    return "".join(parts), char_spans


def gen_synthetic_corpus(params: CorpusParams) -> SyntheticCorpus:
    params.validate()
    rng = np.random.default_rng([params.seed, 0])
    lexicon = build_lexicon(params, rng)
    documents = []
    for doc_id in range(params.n_docs):
        drng = np.random.default_rng([params.seed, 1, doc_id])
        stream = WEB if drng.random() < params.web_fraction else WIKI
        sampler = _Sampler(lexicon.fillers, lexicon.pretrain_entities, params, drng)
        lines, total = [], 0
        while total < params.doc_len:
            words, spans = sampler.sentence(int(drng.integers(6, 13)))
            lines.append(_render(words, spans, markup=(stream == WIKI))[0])
            total += len(words)
        documents.append((stream, "\n".join(lines)))
    return SyntheticCorpus(documents, lexicon)


# ---------------------------------------------------------------- finetuning sets

def non_stopword_unigrams(texts, stopwords=STOPWORDS) -> set[str]:
    return {w for t in texts for w in t.lower().split() if w not in stopwords}


def shared_unigrams(set_a, set_b, stopwords=STOPWORDS) -> set[str]:
    return non_stopword_unigrams(set_a, stopwords) & non_stopword_unigrams(set_b, stopwords)


def check_disjoint_split(set_a, set_b, stopwords=STOPWORDS) -> bool:
    """True iff the two text collections share no non-stopword unigram."""
    return not shared_unigrams(set_a, set_b, stopwords)


def _halves(items, rng):
    order = rng.permutation(len(items))
    half = len(items) // 2
    return [items[k] for k in order[:half]], [items[k] for k in order[half:]]


def gen_ct_dataset(corpus: SyntheticCorpus, n_pool: int = 275, n_test: int = 200, seed: int = 0,
                   params: CorpusParams | None = None) -> tuple[list[CTExample], list[CTExample]]:
    """Training pool and held-out test queries with disjoint non-stopword vocabularies."""
    params = params or CorpusParams()
    rng = np.random.default_rng([seed, 2])
    lex = corpus.lexicon
    fill_a, fill_b = _halves(lex.fillers, rng)
    ent_a, ent_b = _halves(lex.finetune_entities, rng)
    # entity halves may still share the stopword "of" only
    out = []
    for fillers, ents, n in ((fill_a, ent_a, n_pool), (fill_b, ent_b, n_test)):
        sampler = _Sampler(fillers, ents, params, rng)
        examples = []
        for _ in range(n):
            n_ent = int(rng.choice([1, 2], p=[0.7, 0.3]))
            words, spans = sampler.sentence(int(rng.integers(4, 10)), n_entities=n_ent)
            text, char_spans = _render(words, spans, markup=False)
            examples.append(CTExample(text, tuple(char_spans)))
        out.append(examples)
    return out[0], out[1]


def gen_ad_dataset(corpus: SyntheticCorpus, n_snippets: int = 600, seed: int = 0,
                   params: CorpusParams | None = None) -> list[ADExample]:
    """Balanced acronym-detection set: one positive and one negative per snippet."""
    params = params or CorpusParams()
    rng = np.random.default_rng([seed, 3])
    multi = [e for e in corpus.lexicon.finetune_entities if len(e) >= 2]
    if not multi:
        raise ValueError("no multi-word finetune entities to build acronyms from")
    sampler = _Sampler(corpus.lexicon.fillers, multi, params, rng)
    out: list[ADExample] = []
    while len(out) < 2 * n_snippets:
        words, spans = sampler.sentence(int(rng.integers(10, 17)), n_entities=1)
        s, e = spans[0]
        snippet = " ".join(words)
        acronym = "".join(w[0] for w in words[s:e])
        if appears_verbatim(acronym, snippet):
            continue
        out.extend(gen_ad_finetune_example(snippet, (s, e), acronym, rng))
    return out
