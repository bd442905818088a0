"""Seeded synthetic retrieval task: clustered keyword-bag documents and
template queries.

Every document repeats a few topic words, which become its BM25 keyword
identifier. Most documents have a topic of their own; a fraction share
their topic with ``cluster_size - 1`` siblings, so their keyword
identifiers collide. What separates siblings are a few rarer words of
their own, which is also what their queries mention.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import QrelSet, write_corpus, write_qrels, write_queries

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "pl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]

TEMPLATES = [
    "what is {w}",
    "tell me about {w}",
    "find {w}",
    "where can i read about {w}",
    "{w} please",
    "show the page on {w}",
]


@dataclass(frozen=True)
class SyntheticConfig:
    n_docs: int = 200
    cluster_size: int = 2
    clustered_fraction: float = 0.2
    topic_words: int = 3
    topic_repeat: int = 3
    own_words: int = 2
    filler_vocab: int = 40
    filler_per_doc: int = 6
    queries_per_doc: int = 2
    query_topic_words: int = 1
    # documents with no training query at all (the "unseen" test split)
    unseen_fraction: float = 0.1
    seed: int = 0


@dataclass
class SyntheticDataset:
    corpus: list[tuple[str, str]]
    queries: list[tuple[str, str]]
    train_qrels: QrelSet
    test_qrels: QrelSet

    def write(self, directory: str | Path) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": d / "corpus.jsonl",
            "queries": d / "queries.tsv",
            "qrels": d / "qrels.train.tsv",
            "test_qrels": d / "qrels.test.tsv",
        }
        write_corpus(paths["corpus"], self.corpus)
        write_queries(paths["queries"], self.queries)
        write_qrels(paths["qrels"], self.train_qrels)
        write_qrels(paths["test_qrels"], self.test_qrels)
        return paths


def _words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        syl = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticDataset:
    rng = np.random.default_rng(cfg.seed)
    taken: set[str] = set()
    if cfg.cluster_size < 1 or not 0.0 <= cfg.clustered_fraction <= 1.0:
        raise ValueError("need cluster_size >= 1 and 0 <= clustered_fraction <= 1")
    # the first n_clustered documents come in clusters, the rest are singletons
    n_clustered = int(round(cfg.n_docs * cfg.clustered_fraction)) // cfg.cluster_size * cfg.cluster_size
    topic_of = [i // cfg.cluster_size if i < n_clustered else n_clustered // cfg.cluster_size + i - n_clustered
                for i in range(cfg.n_docs)]
    topics = [_words(rng, cfg.topic_words, taken) for _ in range(topic_of[-1] + 1)]
    filler = _words(rng, cfg.filler_vocab, taken)
    unseen = set(rng.permutation(cfg.n_docs)[: int(round(cfg.n_docs * cfg.unseen_fraction))].tolist())
    corpus, queries = [], []
    train, test = {}, {}
    width = len(str(cfg.n_docs - 1))
    for i in range(cfg.n_docs):
        doc_id = f"d{i:0{width}d}"
        topic = topics[topic_of[i]]
        own = _words(rng, cfg.own_words, taken)
        bag = topic * cfg.topic_repeat + own + list(rng.choice(filler, size=cfg.filler_per_doc, replace=False))
        corpus.append((doc_id, " ".join(bag[j] for j in rng.permutation(len(bag)))))
        for k in range(cfg.queries_per_doc):
            qid = f"q{i:0{width}d}_{k}"
            picked = list(rng.choice(topic, size=cfg.query_topic_words, replace=False)) + own
            words = " ".join(picked[j] for j in rng.permutation(len(picked)))
            queries.append((qid, TEMPLATES[rng.integers(len(TEMPLATES))].format(w=words)))
            # first query of each document trains, the rest are held out
            (train if k == 0 and i not in unseen else test)[qid] = {doc_id: 1}
    return SyntheticDataset(corpus, queries, QrelSet(train), QrelSet(test))
