"""``[[anchor]]`` link markup and the blank-line-separated corpus file."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

WIKI = "wiki"
WEB = "web"
STREAM_HEADER = "#stream="


class MarkupError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass
class Document:
    raw: str
    plain: str
    links: list[tuple[int, int]]
    stream_tag: str = WIKI
    doc_id: int = 0

    def anchors(self) -> list[str]:
        return [self.plain[s:e] for s, e in self.links]


@dataclass
class Chunk:
    """One line of a document with its link spans rebased to the line."""
    text: str
    spans: list[tuple[int, int]] = field(default_factory=list)
    doc_id: int = 0
    stream: str = WIKI


def parse_markup(raw: str, stream_tag: str = WIKI, doc_id: int = 0) -> Document:
    """Strip ``[[...]]`` brackets, recording each anchor's span in the plain text."""
    plain: list[str] = []
    links: list[tuple[int, int]] = []
    open_at = None
    open_pos = 0
    i, n = 0, len(raw)
    out_len = 0
    while i < n:
        two = raw[i:i + 2]
        if two == "[[":
            if open_at is not None:
                raise MarkupError("nested '[['", i)
            open_at, open_pos = out_len, i
            i += 2
        elif two == "]]":
            if open_at is None:
                raise MarkupError("unmatched ']]'", i)
            if out_len == open_at:
                raise MarkupError("empty link anchor", open_pos)
            links.append((open_at, out_len))
            open_at = None
            i += 2
        else:
            plain.append(raw[i])
            out_len += 1
            i += 1
    if open_at is not None:
        raise MarkupError("unclosed '[['", open_pos)
    return Document(raw=raw, plain="".join(plain), links=links, stream_tag=stream_tag, doc_id=doc_id)


def to_markup(text: str, spans) -> str:
    out, last = [], 0
    for s, e in sorted(spans):
        out += [text[last:s], "[[", text[s:e], "]]"]
        last = e
    out.append(text[last:])
    return "".join(out)


def chunks(doc: Document) -> list[Chunk]:
    out = []
    start = 0
    for line in doc.plain.split("\n"):
        end = start + len(line)
        if line.strip():
            spans = [(s - start, e - start) for s, e in doc.links if s >= start and e <= end]
            out.append(Chunk(line, spans, doc.doc_id, doc.stream_tag))
        start = end + 1
    return out


def write_corpus(path, documents: list[tuple[str, str]]) -> None:
    """Write ``(stream_tag, markup)`` documents separated by blank lines."""
    blocks = []
    for stream, raw in documents:
        blocks.append(raw if stream == WIKI else f"{STREAM_HEADER}{stream}\n{raw}")
    Path(path).write_bytes(("\n\n".join(blocks) + "\n").encode("utf-8"))


def read_corpus(path) -> list[Document]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def parse_corpus(text: str) -> list[Document]:
    docs = []
    for block in text.split("\n\n"):
        block = block.strip("\n")
        if not block.strip():
            continue
        stream = WIKI
        if block.startswith(STREAM_HEADER):
            header, _, block = block.partition("\n")
            stream = header[len(STREAM_HEADER):].strip()
            if stream not in (WIKI, WEB):
                raise ValueError(f"unknown stream tag {stream!r}")
        docs.append(parse_markup(block, stream, doc_id=len(docs)))
    return docs
