"""Documents, queries, relevance judgments and the shared word vocabulary."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD = "<pad>"
DECODER_START = "<s>"

_PUNCT = re.compile(r"[^\w\s]|_")


class CorpusFormatError(ValueError):
    """Raised for malformed input files or dangling references."""


def normalize(raw: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _PUNCT.sub("", raw.lower()).split()


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: Mapping[str, int] = field(repr=False)

    @classmethod
    def from_tokens(cls, content: Sequence[str]) -> "Vocabulary":
        tokens = tuple(content) + (PAD, DECODER_START)
        mapping = {tok: i for i, tok in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        return cls(tokens, mapping)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def start_id(self) -> int:
        return self.token_to_id[DECODER_START]

    @property
    def special_ids(self) -> dict[str, int]:
        return {PAD: self.pad_id, DECODER_START: self.start_id}

    @property
    def content_size(self) -> int:
        """Number of non-special tokens; content ids are ``range(content_size)``."""
        return self.size - 2

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def tokenize(raw: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids. Out-of-vocabulary words are dropped."""
    out = []
    for word in normalize(raw):
        idx = vocab.token_to_id.get(word)
        # specials can never come out of normalize(), but guard anyway
        if idx is not None and idx < vocab.content_size:
            out.append(idx)
    return out


def build_vocab(texts: Iterable[str], min_df: int = 1, max_size: int | None = None) -> Vocabulary:
    """Document-frequency filtered vocabulary.

    Tokens are ordered by descending df, ties lexicographic; the two special
    tokens take the last two ids.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: Counter[str] = Counter()
    n_docs = 0
    for text in texts:
        n_docs += 1
        df.update(set(normalize(text)))
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in df.items() if c >= min_df), key=lambda t: (-df[t], t))
    if max_size is not None:
        kept = kept[:max_size]
    if not kept:
        raise ValueError(f"every token was filtered out (min_df={min_df}, max_size={max_size})")
    return Vocabulary.from_tokens(kept)


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[int, ...]
    raw: str = ""


@dataclass(frozen=True)
class Query:
    query_id: str
    tokens: tuple[int, ...]
    raw: str = ""


@dataclass(frozen=True)
class QrelSet:
    """query_id -> {doc_id: grade}."""

    judgments: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.judgments)

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.judgments

    def query_ids(self) -> list[str]:
        return sorted(self.judgments)

    def grades(self, query_id: str) -> dict[str, int]:
        return dict(self.judgments.get(query_id, {}))

    def relevant(self, query_id: str) -> set[str]:
        """Docs with a positive grade."""
        return {d for d, g in self.judgments.get(query_id, {}).items() if g > 0}

    def pairs(self) -> list[tuple[str, str]]:
        """All (query_id, doc_id) pairs with positive grade, sorted."""
        return sorted((q, d) for q in self.judgments for d in self.relevant(q))

    def annotated_docs(self) -> set[str]:
        return {d for q in self.judgments for d in self.judgments[q]}


def read_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Raw ``(doc_id, text)`` records from a JSONL corpus, in file order."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id, text = obj["doc_id"], obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed corpus line ({exc})") from None
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise CorpusFormatError(f"{path}:{lineno}: doc_id and text must be strings")
            if doc_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            records.append((doc_id, text))
    return records


def read_queries(path: str | Path) -> list[tuple[str, str]]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(parts)}")
            qid, text = parts
            if qid in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate query_id {qid!r}")
            seen.add(qid)
            records.append((qid, text))
    return records


def make_documents(records: Iterable[tuple[str, str]], vocab: Vocabulary, max_len: int = 156) -> list[Document]:
    return [Document(i, tuple(tokenize(t, vocab)[:max_len]), t) for i, t in records]


def make_queries(records: Iterable[tuple[str, str]], vocab: Vocabulary, max_len: int = 32) -> list[Query]:
    return [Query(i, tuple(tokenize(t, vocab)[:max_len]), t) for i, t in records]


def load_corpus(path: str | Path, vocab: Vocabulary, max_len: int = 156) -> list[Document]:
    return make_documents(read_corpus(path), vocab, max_len)


def load_queries(path: str | Path, vocab: Vocabulary, max_len: int = 32) -> list[Query]:
    return make_queries(read_queries(path), vocab, max_len)


def load_qrels(
    path: str | Path,
    doc_ids: Iterable[str] | None = None,
    query_ids: Iterable[str] | None = None,
) -> QrelSet:
    """Read a ``query_id<TAB>doc_id<TAB>grade`` file.

    When ``doc_ids``/``query_ids`` are given, every reference is checked
    against them.
    """
    known_docs = set(doc_ids) if doc_ids is not None else None
    known_queries = set(query_ids) if query_ids is not None else None
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusFormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(parts)}")
            qid, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: grade {grade_s!r} is not an integer") from None
            if grade < 0:
                raise CorpusFormatError(f"{path}:{lineno}: negative grade {grade}")
            if known_docs is not None and did not in known_docs:
                raise CorpusFormatError(f"{path}:{lineno}: unknown doc_id {did!r}")
            if known_queries is not None and qid not in known_queries:
                raise CorpusFormatError(f"{path}:{lineno}: unknown query_id {qid!r}")
            judgments.setdefault(qid, {})[did] = grade
    return QrelSet(judgments)


def write_corpus(path: str | Path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, text in records:
            fh.write(json.dumps({"doc_id": doc_id, "text": text}, ensure_ascii=False) + "\n")


def write_queries(path: str | Path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, text in records:
            if "\t" in qid or "\t" in text or "\n" in text:
                raise ValueError(f"query {qid!r} contains a tab or newline")
            fh.write(f"{qid}\t{text}\n")


def write_qrels(path: str | Path, qrels: QrelSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in qrels.query_ids():
            for did, grade in sorted(qrels.judgments[qid].items()):
                fh.write(f"{qid}\t{did}\t{grade}\n")
