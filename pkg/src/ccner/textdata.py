"""Text ingestion and annotation primitives.

Documents are plain strings of Unicode scalar characters; tokenization is one
token per character, so tags align one-to-one with characters.  This module
owns fixed-width segmentation, the character vocabulary, the BIO column file
format and the conversion between BIO tags and entity spans.

File formats
------------
BIO column file: UTF-8, one ``<char><TAB><tag>`` line per token, one blank
line between sequences, trailing newline optional.

Vocabulary file: UTF-8, one token per line, line number = id.  Newline,
carriage return and backslash characters are escaped as ``\\n``, ``\\r`` and
``\\\\`` so every token occupies exactly one line.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Document:
    """A source text with a stable identifier."""

    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be nonempty")


@dataclass
class Sequence:
    """A tokenized span of a document, optionally BIO-tagged.

    ``offset`` is the token index of the first character within the source
    document (cumulative across the sequences of one source).
    """

    doc_id: str
    offset: int
    tokens: list[str]
    tags: list[str] | None = None

    def __post_init__(self):
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise ValueError(
                f"sequence {self.doc_id}@{self.offset}: {len(self.tags)} tags "
                f"for {len(self.tokens)} tokens"
            )

    @property
    def text(self) -> str:
        return "".join(self.tokens)

    def key(self) -> str:
        """Stable content digest used for manifests and summary lookup."""
        raw = f"{self.doc_id}\x00{self.offset}\x00{self.text}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TagProfile:
    """An ordered entity-type schema and its derived BIO label set."""

    name: str
    entity_types: tuple[str, ...]

    def __post_init__(self):
        if not self.entity_types:
            raise ValueError("profile needs at least one entity type")
        if len(set(self.entity_types)) != len(self.entity_types):
            raise ValueError("entity types must be unique")

    @property
    def labels(self) -> tuple[str, ...]:
        out = ["O"]
        for t in self.entity_types:
            out.append(f"B-{t}")
            out.append(f"I-{t}")
        return tuple(out)

    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}


_BUILTIN_PROFILES = {
    "A": ("person", "location", "book", "official_title", "country", "time"),
    "B": ("person", "location", "time"),
    "C": ("disease", "syndrome", "formula", "decoction_piece", "symptom", "acupoint"),
}


def builtin_profile(name: str) -> TagProfile:
    try:
        return TagProfile(name, _BUILTIN_PROFILES[name])
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of A, B, C") from None


def custom_profile(entity_types: Iterable[str]) -> TagProfile:
    return TagProfile("custom", tuple(entity_types))


@dataclass(frozen=True)
class Entity:
    """Half-open entity span [start, end) with its type and covered text."""

    etype: str
    start: int
    end: int
    text: str = ""

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad entity span [{self.start}, {self.end})")


class Vocabulary:
    """Bijective token<->id map with four fixed special tokens."""

    CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
    SPECIALS = (CLS, SEP, PAD, UNK)
    CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != self.SPECIALS:
            raise ValueError("first four vocabulary entries must be the special tokens")
        self._tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other._tokens == self._tokens

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @staticmethod
    def _escape(token: str) -> str:
        return token.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")

    @staticmethod
    def _unescape(line: str) -> str:
        if line in ("\\n", "\\r", "\\\\"):
            return {"\\n": "\n", "\\r": "\r", "\\\\": "\\"}[line]
        return line

    def dumps(self) -> str:
        return "".join(self._escape(t) + "\n" for t in self._tokens)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls([cls._unescape(ln) for ln in lines])


def segment(doc: Document, max_len: int) -> list[Sequence]:
    """Greedy fixed-width split of ``doc`` into sequences of <= max_len tokens.

    Concatenating the outputs in order reproduces the document exactly.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    out = []
    for i in range(0, len(doc.text), max_len):
        out.append(Sequence(doc.id, i, list(doc.text[i : i + max_len])))
    return out


def build_vocab(corpus: Iterable[Document], max_size: int) -> Vocabulary:
    """Character vocabulary from a corpus: specials first, then characters by
    descending frequency (ties by code point ascending), truncated at max_size."""
    if max_size < 5:
        raise ValueError("max_size must be >= 5 (four specials plus one token)")
    counts: Counter[str] = Counter()
    for doc in corpus:
        counts.update(doc.text)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
    chars = [ch for ch, _ in ordered[: max_size - len(Vocabulary.SPECIALS)]]
    return Vocabulary(list(Vocabulary.SPECIALS) + chars)


def encode_ids(seq: Sequence, vocab: Vocabulary) -> list[int]:
    """Token ids for a sequence; out-of-vocabulary characters map to UNK."""
    return [vocab.id_of(t) for t in seq.tokens]


def parse_bio(text: str, profile: TagProfile, doc_id: str = "bio") -> list[Sequence]:
    """Parse a BIO column file into tagged sequences.

    Raises ValueError naming the offending line for malformed lines or tags
    outside the profile's label set.
    """
    valid = set(profile.labels)
    sequences: list[Sequence] = []
    tokens: list[str] = []
    tags: list[str] = []
    offset = 0

    def flush():
        nonlocal tokens, tags, offset
        if tokens:
            sequences.append(Sequence(doc_id, offset, tokens, tags))
            offset += len(tokens)
            tokens, tags = [], []

    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            flush()
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ValueError(f"line {lineno}: expected '<token>\\t<tag>', got {line!r}")
        token, tag = parts
        if tag not in valid:
            raise ValueError(f"line {lineno}: tag {tag!r} not in profile {profile.name!r}")
        tokens.append(token)
        tags.append(tag)
    flush()
    return sequences


def serialize_bio(seqs: list[Sequence]) -> str:
    """Inverse of parse_bio.  All sequences must be tagged."""
    blocks = []
    for seq in seqs:
        if seq.tags is None:
            raise ValueError(f"sequence {seq.doc_id}@{seq.offset} has no tags")
        lines = []
        for tok, tag in zip(seq.tokens, seq.tags):
            if "\t" in tok or "\n" in tok:
                raise ValueError("tokens containing TAB or newline cannot be serialized")
            lines.append(f"{tok}\t{tag}")
        blocks.append("\n".join(lines))
    if not blocks:
        return ""
    return "\n\n".join(blocks) + "\n"


def extract_entities(tags: list[str], tokens: list[str] | None = None) -> list[Entity]:
    """Decode BIO labels into entity spans.

    An I-t that does not continue a run of type t opens a new entity, as if it
    were B-t, so imperfect predictions always decode.
    """
    entities: list[Entity] = []
    cur_type: str | None = None
    cur_start = 0

    def close(end: int):
        nonlocal cur_type
        if cur_type is not None:
            text = "".join(tokens[cur_start:end]) if tokens else ""
            entities.append(Entity(cur_type, cur_start, end, text))
            cur_type = None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
        elif tag.startswith("B-"):
            close(i)
            cur_type, cur_start = tag[2:], i
        elif tag.startswith("I-"):
            if cur_type != tag[2:]:
                close(i)
                cur_type, cur_start = tag[2:], i
        else:
            raise ValueError(f"malformed BIO tag {tag!r}")
    close(len(tags))
    return entities


def entities_to_tags(entities: Iterable[Entity], length: int) -> list[str]:
    """BIO labels for a set of non-overlapping spans over ``length`` tokens."""
    tags = ["O"] * length
    for ent in sorted(entities, key=lambda e: e.start):
        if ent.end > length:
            raise ValueError(f"entity {ent} exceeds sequence length {length}")
        if any(t != "O" for t in tags[ent.start : ent.end]):
            raise ValueError(f"entity {ent} overlaps another entity")
        tags[ent.start] = f"B-{ent.etype}"
        for i in range(ent.start + 1, ent.end):
            tags[i] = f"I-{ent.etype}"
    return tags


def read_documents(paths: Iterable, encoding: str = "utf-8") -> Iterator[Document]:
    """One Document per file, id = file name, in the given order."""
    for p in paths:
        with open(p, encoding=encoding) as fh:
            yield Document(id=str(getattr(p, "name", p)), text=fh.read())
