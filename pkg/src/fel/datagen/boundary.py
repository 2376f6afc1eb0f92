"""Four-class span boundary labels shared by hyperlink prediction and CT."""

from __future__ import annotations

from ..tensor import IGNORE_INDEX
from ..tokenizer import TokenSeq

S, E, SE, NONE = 0, 1, 2, 3
LABEL_NAMES = ("S", "E", "S&E", "~(S&E)")


def _check_spans(spans) -> list[tuple[int, int]]:
    spans = sorted((int(s), int(e)) for s, e in spans)
    for s, e in spans:
        if e <= s:
            raise ValueError(f"empty span ({s}, {e})")
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        if s2 < e1:
            raise ValueError(f"overlapping spans ({s1}, {e1}) and ({s2}, {e2})")
    return spans


def _covered(tokens: TokenSeq, span) -> list[int]:
    s, e = span
    return [k for k, (a, b) in enumerate(tokens.offsets) if a < e and b > s]


def snap_spans(tokens: TokenSeq, spans) -> list[tuple[int, int]]:
    """Widen each span outward to whole-token boundaries."""
    out = []
    for span in _check_spans(spans):
        ks = _covered(tokens, span)
        if ks:
            out.append((tokens.offsets[ks[0]][0], tokens.offsets[ks[-1]][1]))
    return out


def encode_boundary_labels(tokens: TokenSeq, spans) -> list[int]:
    """Per-token S / E / S&E / ~(S&E) labels for character-level spans.

    A token partially inside a span counts as inside it.
    """
    labels = [NONE] * len(tokens)
    owner = [None] * len(tokens)
    for span in _check_spans(spans):
        ks = _covered(tokens, span)
        if not ks:
            continue
        for k in ks:
            if owner[k] is not None:
                raise ValueError(f"spans {owner[k]} and {span} collide on token {k} after snapping")
            owner[k] = span
        if len(ks) == 1:
            labels[ks[0]] = SE
        else:
            labels[ks[0]] = S
            labels[ks[-1]] = E
    return labels


def _bracket(text: str, opens, closes) -> str:
    out = []
    for i in range(len(text) + 1):
        out.append("]" * closes.get(i, 0))
        out.append("[" * opens.get(i, 0))
        if i < len(text):
            out.append(text[i])
    return "".join(out)


def decode_brackets(labels, tokens: TokenSeq) -> str:
    """Render per-token labels as ``[`` / ``]`` inserted into the source text.

    Labels are read independently per token, so brackets may be unmatched.
    """
    if len(labels) != len(tokens):
        raise ValueError(f"{len(labels)} labels for {len(tokens)} tokens")
    opens: dict[int, int] = {}
    closes: dict[int, int] = {}
    for lab, (a, b) in zip(labels, tokens.offsets):
        if lab == IGNORE_INDEX:
            continue
        if lab in (S, SE):
            opens[a] = opens.get(a, 0) + 1
        if lab in (E, SE):
            closes[b] = closes.get(b, 0) + 1
    return _bracket(tokens.text, opens, closes)


def bracketize(text: str, spans) -> str:
    """Gold bracket rendering of character spans."""
    spans = _check_spans(spans)
    return _bracket(text, {s: 1 for s, _ in spans}, {e: 1 for _, e in spans})


def label_distribution(label_lists) -> dict[str, float]:
    counts = [0, 0, 0, 0]
    for labels in label_lists:
        for lab in labels:
            if lab != IGNORE_INDEX:
                counts[lab] += 1
    total = sum(counts) or 1
    return {name: c / total for name, c in zip(LABEL_NAMES, counts)}
