"""Keyword identifiers: the top-n BM25-weighted terms of each document."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Iterable, Mapping, Sequence

from .corpus import Document, Vocabulary
from .fileio import atomic_write_text


class KeywordError(ValueError):
    pass


@dataclass(frozen=True)
class TermStats:
    doc_count: int
    df: Mapping[int, int]
    doc_len: Mapping[str, int]
    avg_doc_len: float

    def idf(self, token: int) -> float:
        df = self.df.get(token, 0)
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)


@dataclass(frozen=True)
class KeywordIdentifier:
    tokens: tuple[int, ...]
    scores: tuple[float, ...]
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.tokens)


def compute_stats(docs: Sequence[Document]) -> TermStats:
    if not docs:
        raise KeywordError("cannot compute term statistics of an empty corpus")
    df: Counter[int] = Counter()
    doc_len = {}
    for doc in docs:
        df.update(set(doc.tokens))
        doc_len[doc.doc_id] = len(doc.tokens)
    # sum in sorted order so the mean does not depend on corpus order
    total = sum(doc_len[k] for k in sorted(doc_len))
    return TermStats(len(docs), dict(sorted(df.items())), doc_len, total / len(docs))


def _bm25(tf: int, idf: float, doc_len: int, avg_doc_len: float, k1: float, b: float) -> float:
    norm = 1.0 - b + b * doc_len / avg_doc_len if avg_doc_len > 0 else 1.0
    return idf * (tf * (k1 + 1.0)) / (tf + k1 * norm)


def term_score(token: int, doc: Document, stats: TermStats, k1: float = 1.2, b: float = 0.75) -> float:
    """BM25 term weight of ``token`` inside ``doc``."""
    if k1 <= 0 or not 0.0 <= b <= 1.0:
        raise ValueError(f"need k1 > 0 and 0 <= b <= 1, got k1={k1}, b={b}")
    tf = doc.tokens.count(token)
    if tf == 0:
        raise KeywordError(f"token {token} does not occur in document {doc.doc_id!r}")
    return _bm25(tf, stats.idf(token), len(doc.tokens), stats.avg_doc_len, k1, b)


def extract_keyword_id(
    doc: Document,
    stats: TermStats,
    n: int,
    stopwords: Collection[int] = frozenset(),
    pad_id: int = -1,
    k1: float = 1.2,
    b: float = 0.75,
) -> KeywordIdentifier:
    """Top-``n`` distinct non-stopword tokens by BM25 weight.

    Equal scores are broken by ascending token id. Documents with fewer than
    ``n`` distinct scoreable tokens are padded with ``pad_id`` (score 0) and
    flagged as degenerate.
    """
    if n < 1:
        raise ValueError("identifier length must be >= 1")
    tf = Counter(t for t in doc.tokens if t not in stopwords)
    if not tf:
        raise KeywordError(f"document {doc.doc_id!r} has no scoreable tokens")
    dl = len(doc.tokens)
    scored = sorted(
        ((_bm25(c, stats.idf(t), dl, stats.avg_doc_len, k1, b), t) for t, c in tf.items()),
        key=lambda st: (-st[0], st[1]),
    )[:n]
    tokens = [t for _, t in scored]
    scores = [s for s, _ in scored]
    degenerate = len(tokens) < n
    while len(tokens) < n:
        tokens.append(pad_id)
        scores.append(0.0)
    return KeywordIdentifier(tuple(tokens), tuple(scores), degenerate)


def extract_all(
    docs: Iterable[Document],
    stats: TermStats,
    n: int,
    vocab: Vocabulary,
    stopwords: Iterable[str] = (),
    k1: float = 1.2,
    b: float = 0.75,
) -> dict[str, KeywordIdentifier]:
    stop_ids = frozenset(vocab.token_to_id[w] for w in stopwords if w in vocab.token_to_id)
    return {
        d.doc_id: extract_keyword_id(d, stats, n, stop_ids, vocab.pad_id, k1, b)
        for d in docs
    }


def write_keyword_table(path: str | Path, table: Mapping[str, KeywordIdentifier], vocab: Vocabulary) -> None:
    lines = [f"{doc_id}\t{','.join(vocab.decode(table[doc_id].tokens))}\n" for doc_id in sorted(table)]
    atomic_write_text(path, "".join(lines))


def read_keyword_table(path: str | Path, vocab: Vocabulary) -> dict[str, tuple[int, ...]]:
    """Inverse of :func:`write_keyword_table` (scores are not stored)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                doc_id, toks = line.split("\t")
                out[doc_id] = tuple(vocab.token_to_id[t] for t in toks.split(","))
            except (ValueError, KeyError) as exc:
                raise KeywordError(f"{path}:{lineno}: bad keyword table line ({exc})") from None
    return out
