"""Seeded random retrieval fixtures shared by the inference and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

import oracles
from glen.corpus import Query
from glen.id_index import IdAssignment, IdentifierTrie
from glen.model import GlenModel, ModelConfig


@dataclass
class RetrievalFixture:
    model: GlenModel
    trie: IdentifierTrie
    queries: list[Query]

    def oracle(self, query: Query) -> list[str]:
        if self.model.config.token_decoder_input:
            score_of, w_query = oracles.token_mode_scorer(self.model, query.tokens)
        else:
            with torch.no_grad():
                h = self.model.hiddens([query.tokens])[0].numpy()
            score_of, w_query = oracles.hidden_mode_scorer(h, self.model.E.detach().numpy())
        rows = [(a.doc_id, a.identifier, a.w_doc) for a in self.trie.assignments()]
        return oracles.brute_force_ranking(score_of, w_query, rows)


def retrieval_fixture(seed: int, token_mode: bool = False, max_docs: int = 64, n_queries: int = 3) -> RetrievalFixture:
    """A tiny random model plus a random identifier table.

    The alphabet is kept small so prefixes are shared and buckets collide.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    content = int(rng.integers(2, 7))
    model = GlenModel(
        ModelConfig(vocab_size=content + 2, n=n, m=8, enc_layers=1, dec_layers=1, seed=seed, token_decoder_input=token_mode)
    )
    n_docs = int(rng.integers(1, max_docs + 1))
    rows = [
        IdAssignment(
            f"d{i:02d}",
            tuple(int(t) for t in rng.integers(0, content, n)),
            tuple(float(x) for x in rng.normal(size=n)),
        )
        for i in range(n_docs)
    ]
    queries = [
        Query(f"q{j}", tuple(int(t) for t in rng.integers(0, content, int(rng.integers(1, 6)))))
        for j in range(n_queries)
    ]
    return RetrievalFixture(model, IdentifierTrie.build(rows), queries)


def _distinct_queries(model: GlenModel, rng: np.random.Generator, count: int, draws: int = 300):
    """Up to ``count`` random queries whose greedy identifiers all differ."""
    found: dict[tuple[int, ...], Query] = {}
    for _ in range(draws):
        q = Query(f"q{len(found)}", tuple(int(t) for t in rng.integers(0, 8, 4)))
        with torch.no_grad():
            z, _ = model.identifiers_from_hiddens(model.hiddens([q.tokens])[0])
        found.setdefault(tuple(z.tolist()), q)
        if len(found) == count:
            break
    return found


def collision_fixture(seed: int = 0, n_queries: int = 4) -> tuple[RetrievalFixture, dict[str, str]]:
    """Every query's best identifier holds a 2-doc bucket: its relevant document,
    whose weights point the same way as the query's, and a distractor that
    points elsewhere. Returns the fixture and query -> relevant doc_id."""
    rng = np.random.default_rng(seed)
    # an untrained model can send every query to the same identifier; try further seeds
    for model_seed in range(seed, seed + 100):
        model = GlenModel(ModelConfig(vocab_size=10, n=2, m=8, enc_layers=1, dec_layers=1, seed=model_seed))
        found = _distinct_queries(model, rng, n_queries)
        if len(found) == n_queries:
            break
    else:
        raise RuntimeError("no model seed separates the queries")
    rows, queries, relevant = [], [], {}
    for i, (z, q) in enumerate(found.items()):
        with torch.no_grad():
            w_q = model.identifiers_from_hiddens(model.hiddens([q.tokens])[0])[1].numpy()
        close = w_q + 0.05 * rng.normal(size=w_q.shape)
        while True:
            far = rng.normal(size=w_q.shape)
            if oracles.cosine(far, w_q) < oracles.cosine(close, w_q) - 0.2:
                break
        # doc_id order must not give the answer away
        rel, other = (f"a{i}", f"b{i}") if rng.random() < 0.5 else (f"b{i}", f"a{i}")
        rows.append(IdAssignment(rel, z, tuple(close.tolist())))
        rows.append(IdAssignment(other, z, tuple(far.tolist())))
        q = Query(f"q{i}", q.tokens)
        relevant[q.query_id] = rel
        queries.append(q)
    return RetrievalFixture(model, IdentifierTrie.build(rows), queries), relevant
