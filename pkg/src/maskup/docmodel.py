"""Text representation: tokens with byte offsets, BIO2 tags, entity spans, CoNLL I/O.

All offsets are UTF-8 byte offsets into the document text.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError, ParseError, ValidationError

TAGS: tuple[str, ...] = (
    "O",
    "B-PER",
    "I-PER",
    "B-ORG",
    "I-ORG",
    "B-LOC",
    "I-LOC",
    "B-MISC",
    "I-MISC",
)
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
LABELS: tuple[str, ...] = ("PER", "ORG", "LOC", "MISC")
ENTITY_TAGS = TAGS[1:]


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class EntitySpan:
    label: str
    token_start: int
    token_end: int
    byte_start: int
    byte_end: int

    @property
    def byte_length(self) -> int:
        return self.byte_end - self.byte_start


@dataclass(frozen=True)
class Document:
    text: str
    tokens: tuple[Token, ...] = ()
    tags: tuple[str, ...] | None = None
    raw: bytes = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "raw", self.text.encode("utf-8"))
        if self.tags is not None:
            tags = tuple(self.tags)
            object.__setattr__(self, "tags", tags)
            if len(tags) != len(self.tokens):
                raise ContractError(
                    f"{len(tags)} tags for {len(self.tokens)} tokens"
                )
            validate_bio2(tags)

    @classmethod
    def from_text(cls, text: str | bytes, tags: Sequence[str] | None = None) -> "Document":
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        return cls(text, tuple(tokenize(text)), None if tags is None else tuple(tags))

    @classmethod
    def from_words(cls, words: Sequence[str], tags: Sequence[str] | None = None) -> "Document":
        """Build a document whose text is ``words`` joined by single spaces."""
        tokens = []
        pos = 0
        for i, w in enumerate(words):
            if i:
                pos += 1
            n = len(w.encode("utf-8"))
            tokens.append(Token(w, pos, pos + n))
            pos += n
        return cls(" ".join(words), tuple(tokens), None if tags is None else tuple(tags))

    def with_tags(self, tags: Sequence[str] | None) -> "Document":
        return Document(self.text, self.tokens, None if tags is None else tuple(tags))

    def spans(self) -> list[EntitySpan]:
        if self.tags is None:
            return []
        return tags_to_spans(self.tokens, self.tags)

    def __len__(self) -> int:
        return len(self.tokens)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def tokenize(text: str | bytes) -> list[Token]:
    """Split into maximal alphanumeric runs and single punctuation characters.

    Bytes input is decoded strictly, so malformed UTF-8 raises ``UnicodeDecodeError``.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    tokens: list[Token] = []
    byte_pos = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            byte_pos += len(ch.encode("utf-8"))
            i += 1
            continue
        j = i + 1
        if _is_word_char(ch):
            while j < n and _is_word_char(text[j]):
                j += 1
        piece = text[i:j]
        width = len(piece.encode("utf-8"))
        tokens.append(Token(piece, byte_pos, byte_pos + width))
        byte_pos += width
        i = j
    return tokens


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, _, label = tag.partition("-")
    return prefix, label


def validate_bio2(tags: Sequence[str]) -> None:
    prev_label = None
    for i, tag in enumerate(tags):
        if tag not in TAG_INDEX:
            raise ValidationError(f"unknown tag {tag!r} at index {i}")
        prefix, label = _split_tag(tag)
        if prefix == "I" and prev_label != label:
            raise ValidationError(f"invalid BIO2 sequence at index {i}: {tag} follows {tags[i-1] if i else 'start'}")
        prev_label = label


def is_bio2(tags: Sequence[str]) -> bool:
    try:
        validate_bio2(tags)
    except ValidationError:
        return False
    return True


def tags_to_spans(tokens: Sequence[Token], tags: Sequence[str]) -> list[EntitySpan]:
    if len(tokens) != len(tags):
        raise ContractError(f"{len(tags)} tags for {len(tokens)} tokens")
    validate_bio2(tags)
    spans: list[EntitySpan] = []
    start = None
    label = None

    def close(end: int) -> None:
        spans.append(EntitySpan(label, start, end, tokens[start].start, tokens[end - 1].end))

    for i, tag in enumerate(tags):
        prefix, lab = _split_tag(tag)
        if prefix == "I":
            continue
        if start is not None:
            close(i)
            start = None
        if prefix == "B":
            start, label = i, lab
    if start is not None:
        close(len(tags))
    return spans


def spans_to_tags(tokens: Sequence[Token], spans: Iterable[EntitySpan]) -> list[str]:
    tags = ["O"] * len(tokens)
    for sp in sorted(spans, key=lambda s: s.token_start):
        if sp.label not in LABELS:
            raise ValidationError(f"unknown entity label {sp.label!r}")
        if not 0 <= sp.token_start < sp.token_end <= len(tokens):
            raise ValidationError(f"span {sp} out of range for {len(tokens)} tokens")
        for i in range(sp.token_start, sp.token_end):
            if tags[i] != "O":
                raise ValidationError(f"overlapping spans at token {i}")
            tags[i] = ("B-" if i == sp.token_start else "I-") + sp.label
    return tags


def make_span(tokens: Sequence[Token], label: str, token_start: int, token_end: int) -> EntitySpan:
    if not 0 <= token_start < token_end <= len(tokens):
        raise ValidationError(f"span ({token_start},{token_end}) out of range for {len(tokens)} tokens")
    return EntitySpan(label, token_start, token_end, tokens[token_start].start, tokens[token_end - 1].end)


def normalize_iob1(tags: Sequence[str]) -> list[str]:
    """Rewrite IOB1 (or already-BIO2) labels so every entity starts with ``B-``."""
    out: list[str] = []
    prev_label = None
    for col, tag in enumerate(tags):
        if tag == "O":
            out.append("O")
            prev_label = None
            continue
        prefix, _, label = tag.partition("-")
        if prefix not in ("B", "I") or label not in LABELS:
            raise ParseError(f"unknown label {tag!r}", column=col)
        if prefix == "I" and prev_label != label:
            prefix = "B"
        out.append(f"{prefix}-{label}")
        prev_label = label
    return out


def read_conll(path: str | os.PathLike) -> list[Document]:
    docs: list[Document] = []
    words: list[str] = []
    labels: list[str] = []

    def flush() -> None:
        if words:
            docs.append(Document.from_words(words, normalize_iob1(labels)))
            words.clear()
            labels.clear()

    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            cols = line.split()
            if cols[0] == "-DOCSTART-":
                flush()
                continue
            if len(cols) < 2:
                raise ParseError(f"expected token and label columns, got {line!r}", line=lineno)
            try:
                normalize_iob1([cols[-1]])
            except ParseError as e:
                raise ParseError(f"unknown label {cols[-1]!r}", line=lineno, column=len(cols)) from e
            words.append(cols[0])
            labels.append(cols[-1])
    flush()
    return docs


def write_conll(docs: Iterable[Document], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        first = True
        for doc in docs:
            if not doc.tokens:
                continue
            if not first:
                fh.write("\n")
            first = False
            tags = doc.tags if doc.tags is not None else ("O",) * len(doc.tokens)
            for tok, tag in zip(doc.tokens, tags):
                fh.write(f"{tok.text} {tag}\n")
