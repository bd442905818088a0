"""Offline identifier assignment, trie-constrained search, collision ranking."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np
import torch

from .corpus import Document, Query
from .fileio import atomic_write_text
from .id_index import IdAssignment, IdentifierTrie
from .model import DecodeState, GlenModel

log = logging.getLogger(__name__)

# Either a fixed [n, |V|] matrix of per-step log-probabilities (hidden feedback:
# steps do not depend on earlier choices) or a callable mapping a prefix to
# the next step's log-probabilities (token feedback).
StepScores = Union[np.ndarray, Callable[[tuple[int, ...]], np.ndarray]]


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)
    k: int = 0

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]


def assign_ids(docs: Iterable[Document], model: GlenModel) -> list[IdAssignment]:
    docs = sorted(docs, key=lambda d: d.doc_id)
    if not docs:
        return []
    z, w = model.predict_batch([d.tokens for d in docs])
    return [IdAssignment(d.doc_id, tuple(zi), tuple(wi)) for d, zi, wi in zip(docs, z.tolist(), w.tolist())]


def _ratio_scores(logits: torch.Tensor) -> torch.Tensor:
    # log(q.e_j / sum_i q.e_i); undefined (non-positive ratio) entries are -inf
    ratio = logits / logits.sum(-1, keepdim=True)
    return torch.where(ratio > 0, torch.log(ratio.clamp(min=1e-300)), torch.full_like(ratio, float("-inf")))


def step_scores_from_hiddens(model: GlenModel, hiddens: torch.Tensor, scorer: str = "softmax") -> np.ndarray:
    logits = model.logits(hiddens)
    if scorer == "softmax":
        return torch.log_softmax(logits, dim=-1).numpy()
    if scorer == "ratio":
        return _ratio_scores(logits).numpy()
    raise ValueError(f"unknown scorer {scorer!r}")


def query_distributions(query_tokens: Sequence[int], model: GlenModel, scorer: str = "softmax") -> np.ndarray:
    """[n, |V|] per-step log-probabilities of a query (hidden-feedback model)."""
    with torch.no_grad():
        h = model.hiddens([query_tokens])[0]
        return step_scores_from_hiddens(model, h, scorer)


def _token_mode_scores(model: GlenModel, query_tokens: Sequence[int], scorer: str) -> Callable[[tuple[int, ...]], np.ndarray]:
    with torch.no_grad():
        memory = model.encode(query_tokens)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def scores(prefix: tuple[int, ...]) -> np.ndarray:
        if prefix not in cache:
            with torch.no_grad():
                state = DecodeState(memory, emitted=list(prefix))
                for _ in range(len(prefix) + 1):
                    h = model.decode_step(state)
                cache[prefix] = step_scores_from_hiddens(model, h, scorer)
        return cache[prefix]

    return scores


def constrained_search(
    distributions: StepScores,
    trie: IdentifierTrie,
    k: int,
    beam: int = 100,
) -> list[tuple[tuple[int, ...], float]]:
    """Top-``k`` stored identifiers by summed per-step log-probability.

    Only trie paths are expanded. Ties go to the lexicographically smaller
    identifier. With ``beam`` at least the number of leaves nothing is ever
    pruned, so the result is exact.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if beam < k:
        raise ValueError(f"beam ({beam}) must be >= k ({k})")
    if len(trie) == 0:
        raise ValueError("empty identifier trie")
    if callable(distributions):
        step = distributions
    else:
        mat = np.asarray(distributions)
        step = lambda prefix: mat[len(prefix)]  # noqa: E731
    hyps: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for _ in range(trie.n):
        expanded = []
        for prefix, score in hyps:
            row = step(prefix)
            for tok in trie.valid_children(prefix):
                expanded.append((prefix + (tok,), score + float(row[tok])))
        hyps = heapq.nsmallest(beam, expanded, key=lambda h: (-h[1], h[0]))
    return hyps[:k]


def rel_id(w_query: Sequence[float], w_doc: Sequence[float]) -> float:
    """Cosine between identifier logit vectors; 0 if either is all-zero."""
    a = np.asarray(w_query, dtype=np.float64)
    b = np.asarray(w_doc, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        log.debug("zero-norm identifier weights; rel_id set to 0")
        return 0.0
    return float(a @ b / (na * nb))


class _QueryView:
    """Per-query state shared by retrieve and random_collision_rank."""

    def __init__(self, model: GlenModel, query_tokens: Sequence[int], scorer: str, hiddens: torch.Tensor | None = None):
        self.model = model
        self.tokens = query_tokens
        self.token_mode = model.config.token_decoder_input
        if self.token_mode:
            self.scores: StepScores = _token_mode_scores(model, query_tokens, scorer)
            self.hiddens = None
        else:
            with torch.no_grad():
                self.hiddens = hiddens if hiddens is not None else model.hiddens([query_tokens])[0]
                self.scores = step_scores_from_hiddens(model, self.hiddens, scorer)

    def w_query(self, identifier: tuple[int, ...]) -> np.ndarray:
        with torch.no_grad():
            if self.token_mode:
                h = self.model.hiddens([self.tokens], feed=torch.tensor([identifier]))[0]
            else:
                h = self.hiddens
            z = torch.tensor(identifier, dtype=torch.long)
            return (h * self.model.E[z]).sum(-1).numpy()


def _rank(
    query_id: str,
    view: _QueryView,
    trie: IdentifierTrie,
    k: int,
    beam: int,
    order_bucket: Callable[[tuple[int, ...], list[IdAssignment]], list[IdAssignment]],
) -> RankedList:
    ranked = RankedList(query_id, [], k)
    for identifier, score in constrained_search(view.scores, trie, min(k, beam), beam):
        for a in order_bucket(identifier, trie.bucket(identifier)):
            ranked.entries.append((a.doc_id, score))
            if len(ranked.entries) == k:
                return ranked
    return ranked


def retrieve(
    query: Query,
    model: GlenModel,
    trie: IdentifierTrie,
    k: int = 100,
    beam: int = 100,
    scorer: str = "softmax",
    hiddens: torch.Tensor | None = None,
) -> RankedList:
    """Rank documents for a query; colliding documents ordered by rel_id."""
    view = _QueryView(model, query.tokens, scorer, hiddens)

    def by_cosine(identifier, bucket):
        wq = view.w_query(identifier)
        return sorted(bucket, key=lambda a: (-rel_id(wq, a.w_doc), a.doc_id))

    return _rank(query.query_id, view, trie, k, beam, by_cosine)


def random_collision_rank(
    query: Query,
    model: GlenModel,
    trie: IdentifierTrie,
    rng: np.random.Generator,
    k: int = 100,
    beam: int = 100,
    scorer: str = "softmax",
    hiddens: torch.Tensor | None = None,
) -> RankedList:
    """As :func:`retrieve`, but colliding documents are shuffled."""
    view = _QueryView(model, query.tokens, scorer, hiddens)

    def shuffled(identifier, bucket):
        return [bucket[i] for i in rng.permutation(len(bucket))]

    return _rank(query.query_id, view, trie, k, beam, shuffled)


def query_hiddens(model: GlenModel, queries: Sequence[Query], chunk: int = 256) -> list[torch.Tensor]:
    out = []
    with torch.no_grad():
        for i in range(0, len(queries), chunk):
            out.extend(model.hiddens([q.tokens for q in queries[i : i + chunk]]))
    return out


def retrieve_all(
    queries: Sequence[Query],
    model: GlenModel,
    trie: IdentifierTrie,
    k: int = 100,
    beam: int = 100,
    scorer: str = "softmax",
) -> list[RankedList]:
    queries = sorted(queries, key=lambda q: q.query_id)
    if model.config.token_decoder_input:
        return [retrieve(q, model, trie, k, beam, scorer) for q in queries]
    hs = query_hiddens(model, queries)
    return [retrieve(q, model, trie, k, beam, scorer, h) for q, h in zip(queries, hs)]


# -- TREC run files ------------------------------------------------------------


def format_run(runs: Iterable[RankedList], tag: str = "glen") -> str:
    lines = []
    for r in runs:
        for rank, (doc_id, score) in enumerate(r.entries, 1):
            lines.append(f"{r.query_id} Q0 {doc_id} {rank} {format(score, '.17g')} {tag}\n")
    return "".join(lines)


def write_run(path: str | Path, runs: Iterable[RankedList], tag: str = "glen") -> None:
    atomic_write_text(path, format_run(runs, tag))


def read_run(path: str | Path) -> dict[str, RankedList]:
    runs: dict[str, RankedList] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns in TREC run line")
            qid, _, doc_id, _rank, score, _tag = parts
            runs.setdefault(qid, RankedList(qid)).entries.append((doc_id, float(score)))
    for r in runs.values():
        r.k = len(r.entries)
    return runs
