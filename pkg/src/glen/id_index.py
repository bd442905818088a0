"""Identifier trie with collision buckets and prefix-aware negative sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .fileio import atomic_write_text


class IdIndexError(ValueError):
    pass


@dataclass(frozen=True)
class IdAssignment:
    doc_id: str
    identifier: tuple[int, ...]
    w_doc: tuple[float, ...]


class _Node:
    __slots__ = ("children", "bucket", "doc_ids")

    def __init__(self):
        self.children: dict[int, _Node] = {}
        self.bucket: list[IdAssignment] = []
        # every doc stored below this node, ascending doc_id
        self.doc_ids: list[str] = []


class IdentifierTrie:
    """Depth-n trie over identifier tokens. Leaves hold collision buckets.

    Immutable once built; use :meth:`build` (or :func:`refresh`) to make a new one.
    """

    def __init__(self, n: int):
        self.n = n
        self.root = _Node()
        self._by_doc: dict[str, IdAssignment] = {}

    @classmethod
    def build(cls, assignments: Iterable[IdAssignment]) -> "IdentifierTrie":
        items = sorted(assignments, key=lambda a: a.doc_id)
        if not items:
            raise IdIndexError("cannot build an identifier trie without documents")
        n = len(items[0].identifier)
        trie = cls(n)
        for a in items:
            if len(a.identifier) != n or len(a.w_doc) != n:
                raise IdIndexError(f"document {a.doc_id!r}: identifier length {len(a.identifier)} != {n}")
            if not all(np.isfinite(a.w_doc)):
                raise IdIndexError(f"document {a.doc_id!r}: non-finite identifier weights")
            if a.doc_id in trie._by_doc:
                raise IdIndexError(f"duplicate doc_id {a.doc_id!r}")
            trie._by_doc[a.doc_id] = a
            node = trie.root
            node.doc_ids.append(a.doc_id)
            for tok in a.identifier:
                node = node.children.setdefault(tok, _Node())
                node.doc_ids.append(a.doc_id)
            node.bucket.append(a)
        return trie

    def __len__(self) -> int:
        return len(self._by_doc)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_doc

    def assignment(self, doc_id: str) -> IdAssignment:
        return self._by_doc[doc_id]

    def assignments(self) -> list[IdAssignment]:
        return [self._by_doc[d] for d in sorted(self._by_doc)]

    def _walk(self, prefix: Sequence[int]) -> _Node | None:
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def valid_children(self, prefix: Sequence[int] = ()) -> set[int]:
        node = self._walk(prefix)
        return set(node.children) if node is not None else set()

    def bucket(self, identifier: Sequence[int]) -> list[IdAssignment]:
        if len(identifier) != self.n:
            return []
        node = self._walk(identifier)
        return list(node.bucket) if node is not None else []

    def leaves(self) -> Iterator[tuple[tuple[int, ...], list[IdAssignment]]]:
        """(identifier, bucket) pairs in lexicographic identifier order."""
        stack: list[tuple[tuple[int, ...], _Node]] = [((), self.root)]
        while stack:
            path, node = stack.pop()
            if len(path) == self.n:
                yield path, list(node.bucket)
                continue
            for tok in sorted(node.children, reverse=True):
                stack.append((path + (tok,), node.children[tok]))

    def leaf_count(self) -> int:
        return sum(1 for _ in self.leaves())

    def bucket_size(self, doc_id: str) -> int:
        return len(self.bucket(self._by_doc[doc_id].identifier))

    def tiers(self, doc_id: str) -> list[list[str]]:
        """Other documents grouped by shared-prefix depth with ``doc_id``.

        ``tiers[k]`` lists (ascending doc_id) the documents whose identifier
        shares exactly the first ``n - k`` tokens, so the deepest tier comes first.
        """
        path = [self.root]
        for tok in self._by_doc[doc_id].identifier:
            path.append(path[-1].children[tok])
        out = []
        deeper: set[str] = {doc_id}
        for node in reversed(path):
            tier = [d for d in node.doc_ids if d not in deeper]
            out.append(tier)
            deeper.update(tier)
        return out

    def serialize(self) -> str:
        return "".join(format_assignment(a) for a in self.assignments())


def prefix_negatives(trie: IdentifierTrie, target: str, n_neg: int, rng: np.random.Generator) -> list[str]:
    """Negatives sharing the longest identifier prefix with ``target``.

    Whole tiers are taken from the deepest shared depth downwards; the first
    tier that would overflow ``n_neg`` is sampled uniformly without
    replacement. Result order: deeper tiers first, then ascending doc_id.
    """
    if n_neg <= 0:
        return []
    out: list[str] = []
    for tier in trie.tiers(target):
        room = n_neg - len(out)
        if len(tier) <= room:
            out.extend(tier)
        else:
            pick = rng.choice(len(tier), size=room, replace=False)
            out.extend(sorted(tier[i] for i in pick))
        if len(out) >= n_neg:
            break
    return out


def random_negatives(trie: IdentifierTrie, target: str, n_neg: int, rng: np.random.Generator) -> list[str]:
    """Uniform negatives from the whole corpus, excluding ``target`` (ablation)."""
    if n_neg <= 0:
        return []
    pool = [d for d in sorted(trie._by_doc) if d != target]
    k = min(n_neg, len(pool))
    return sorted(pool[i] for i in rng.choice(len(pool), size=k, replace=False))


def refresh(model, docs) -> IdentifierTrie:
    """Re-predict every document's identifier under the current parameters."""
    docs = sorted(docs, key=lambda d: d.doc_id)
    if not docs:
        raise IdIndexError("cannot refresh an identifier trie for an empty corpus")
    z, w = model.predict_batch([d.tokens for d in docs])
    return IdentifierTrie.build(
        IdAssignment(d.doc_id, tuple(zi), tuple(wi)) for d, zi, wi in zip(docs, z.tolist(), w.tolist())
    )


# -- identifier table ------------------------------------------------------


def format_assignment(a: IdAssignment) -> str:
    ids = ",".join(str(t) for t in a.identifier)
    ws = ",".join(format(float(x), ".17g") for x in a.w_doc)
    return f"{a.doc_id}\t{ids}\t{ws}\n"


def write_id_table(path: str | Path, assignments: Iterable[IdAssignment]) -> None:
    text = "".join(format_assignment(a) for a in sorted(assignments, key=lambda a: a.doc_id))
    atomic_write_text(path, text)


def read_id_table(path: str | Path) -> list[IdAssignment]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                doc_id, ids, ws = line.split("\t")
                ident = tuple(int(t) for t in ids.split(","))
                weights = tuple(float(x) for x in ws.split(","))
            except ValueError as exc:
                raise IdIndexError(f"{path}:{lineno}: bad identifier table line ({exc})") from None
            if len(ident) != len(weights):
                raise IdIndexError(f"{path}:{lineno}: {len(ident)} identifier tokens but {len(weights)} weights")
            out.append(IdAssignment(doc_id, ident, weights))
    return out
