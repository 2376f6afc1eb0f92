import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fel.tokenizer import (
    SPECIALS, UNK_ID, Vocab, VocabError, build_vocab, segment_sample, segment_viterbi, segmentation_score,
)


def vocab_of(probs):
    return Vocab({p: math.log(q) for p, q in probs.items()})


def all_segmentations(word, pieces):
    """Brute-force enumeration of every way to cut ``word`` into known pieces."""
    if not word:
        return [[]]
    out = []
    for j in range(1, len(word) + 1):
        if word[:j] in pieces:
            out += [[word[:j]] + rest for rest in all_segmentations(word[j:], pieces)]
    return out


CORPUS = ["the cat sat on the mat", "a cat and a hat", "that hat is the best hat", "mats and cats"]


@pytest.fixture(scope="module")
def small_vocab():
    return build_vocab(CORPUS, 30)


class TestBuildVocab:
    def test_hand_count(self):
        v = build_vocab(["aaab"], 7)
        assert set(v.log_probs) == {"a", "b"}
        pa, pb = math.exp(v.log_probs["a"]), math.exp(v.log_probs["b"])
        assert pa / (pa + pb) == pytest.approx(3 / 4)
        assert pa == pytest.approx(3 / 4)

    def test_target_below_char_count(self):
        with pytest.raises(VocabError):
            build_vocab(["abcdef"], 8)

    def test_empty_corpus(self):
        with pytest.raises(VocabError):
            build_vocab([], 10)

    def test_deterministic_bytes(self, tmp_path):
        build_vocab(CORPUS, 30).save(tmp_path / "a.txt")
        build_vocab(list(CORPUS), 30).save(tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_size_and_invariants(self, small_vocab):
        v = small_vocab
        assert len(v) == 30
        assert v.pieces[:5] == list(SPECIALS)
        assert all(lp <= 0 and math.isfinite(lp) for lp in v.log_probs.values())
        for text in CORPUS:
            assert set(text) <= v.char_set
        lps = [v.log_probs[p] for p in v.pieces[5:]]
        assert lps == sorted(lps, reverse=True)

    def test_available_smaller_than_target(self):
        v = build_vocab(["ab"], 100, min_count=1)
        assert set(v.log_probs) == {"a", "b", "ab"}

    def test_file_round_trip(self, small_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        small_vocab.save(path)
        first = path.read_text().splitlines()[0]
        assert first == f"#unigram-vocab v1 size={len(small_vocab)}"
        loaded = Vocab.load(path)
        assert loaded == small_vocab
        assert loaded.pieces == small_vocab.pieces

    def test_escaped_pieces_round_trip(self):
        v = Vocab({"\t": -1.0, "\\": -2.0, "\n": -3.0, "x": -0.5})
        assert Vocab.from_text(v.to_text()) == v

    def test_corrupt_file(self, small_vocab):
        text = small_vocab.to_text()
        with pytest.raises(VocabError):
            Vocab.from_text(text.replace("size=", "size=9"))
        with pytest.raises(VocabError):
            Vocab.from_text("\n".join(text.splitlines()[1:]))


class TestViterbi:
    def test_enumerated_example(self):
        v = vocab_of({"a": 0.4, "b": 0.4, "ab": 0.2})
        # two segmentations: a|b = 0.16, ab = 0.2
        assert segment_viterbi("ab", v).pieces == ("ab",)

    def test_single_char(self, small_vocab):
        seq = segment_viterbi("t", small_vocab)
        assert seq.pieces == ("t",) and seq.offsets == ((0, 1),)

    def test_unknown_char(self, small_vocab):
        seq = segment_viterbi("cat π", small_vocab)
        k = seq.pieces.index("π")
        assert seq.ids[k] == UNK_ID
        assert seq.offsets[k] == (4, 5)
        assert "".join(seq.pieces) == "cat π"

    def test_tie_prefers_fewer_pieces(self):
        # a|bc and ab|c and a|b|c: give ab|c and a|b|c equal score, abc absent
        v = vocab_of({"a": 0.5, "b": 0.5, "c": 0.25, "ab": 0.25})
        # a|b|c = .0625, ab|c = .0625 -> fewer pieces wins
        assert segment_viterbi("abc", v).pieces == ("ab", "c")

    def test_tie_prefers_leftmost_longest(self):
        v = vocab_of({"a": 0.2, "b": 0.2, "c": 0.2, "ab": 0.1, "bc": 0.1})
        # ab|c and a|bc both score 0.02 with two pieces
        assert segment_viterbi("abc", v).pieces == ("ab", "c")

    def test_spaces_are_own_pieces(self, small_vocab):
        seq = segment_viterbi("the  cat", small_vocab)
        assert seq.pieces.count(" ") == 2
        assert all(" " not in p or p == " " for p in seq.pieces)

    def test_matches_brute_force(self, small_vocab):
        pieces = set(small_vocab.log_probs)
        for word in ["cats", "thathat", "mathe", "besthat"]:
            best = max(sum(small_vocab.log_probs[p] for p in seg) for seg in all_segmentations(word, pieces))
            got = segment_viterbi(word, small_vocab)
            assert segmentation_score(got, small_vocab) == pytest.approx(best, abs=1e-12)

    def test_lowercases(self, small_vocab):
        assert segment_viterbi("CAT", small_vocab).text == "cat"


class TestSample:
    def test_two_path_probability(self):
        v = vocab_of({"a": 0.5, "aa": 0.5})
        rng = np.random.default_rng(0)
        hits = sum(segment_sample("aa", v, 1.0, rng).pieces == ("aa",) for _ in range(10_000))
        # paths: aa -> 0.5, a|a -> 0.25
        assert hits / 10_000 == pytest.approx(2 / 3, abs=0.03)

    def test_three_path_distribution_within_3_sigma(self):
        probs = {"a": 0.3, "b": 0.2, "c": 0.1, "ab": 0.25, "bc": 0.15}
        v = vocab_of(probs)
        alpha = 0.7
        paths = all_segmentations("abc", set(probs))
        assert len(paths) == 3
        weights = np.array([math.prod(probs[p] for p in seg) ** alpha for seg in paths])
        exact = weights / weights.sum()
        rng = np.random.default_rng(1)
        n = 10_000
        counts = Counter(segment_sample("abc", v, alpha, rng).pieces for _ in range(n))
        for seg, p in zip(paths, exact):
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(counts[tuple(seg)] - n * p) < 3 * sigma

    def test_seeded_determinism(self, small_vocab):
        a = segment_sample("the best cats sat", small_vocab, 0.2, np.random.default_rng(5))
        b = segment_sample("the best cats sat", small_vocab, 0.2, np.random.default_rng(5))
        assert a == b

    def test_alpha_range(self, small_vocab):
        with pytest.raises(ValueError):
            segment_sample("cat", small_vocab, 0.0, np.random.default_rng(0))


texts = st.text(alphabet="thecasmbπ ", min_size=1, max_size=30)


@settings(max_examples=80, deadline=None)
@given(texts, st.integers(0, 2**32 - 1))
def test_round_trip_and_viterbi_dominates(small_vocab, text, seed):
    best = segment_viterbi(text, small_vocab)
    sampled = segment_sample(text, small_vocab, 0.5, np.random.default_rng(seed))
    for seq in (best, sampled):
        assert "".join(seq.pieces) == text
        assert seq.offsets[0][0] == 0 and seq.offsets[-1][1] == len(text)
        assert all(a[1] == b[0] for a, b in zip(seq.offsets, seq.offsets[1:]))
        assert all(text[s:e] == p for (s, e), p in zip(seq.offsets, seq.pieces))
    assert segmentation_score(best, small_vocab) >= segmentation_score(sampled, small_vocab) - 1e-9
