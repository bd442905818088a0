"""Independent reference implementations used only by the tests.

Each oracle recomputes a quantity from its definition with plain Python /
numpy, sharing no code with the package beyond data containers.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Mapping, Sequence

import numpy as np
import torch


# -- BM25 keyword identifiers ------------------------------------------------


def bm25_keywords(
    doc: Sequence[int],
    corpus: Sequence[Sequence[int]],
    n: int,
    stopwords: frozenset[int] = frozenset(),
    pad_id: int = -1,
    k1: float = 1.2,
    b: float = 0.75,
) -> tuple[list[int], list[float]]:
    """Greedy selection: repeatedly take the best remaining (score, -id)."""
    N = len(corpus)
    avg = sum(len(d) for d in corpus) / N
    remaining = {}
    for t in set(doc) - stopwords:
        df = sum(1 for d in corpus if t in d)
        idf = math.log((N - df + 0.5) / (df + 0.5) + 1.0)
        tf = list(doc).count(t)
        norm = 1.0 - b + b * len(doc) / avg if avg > 0 else 1.0
        remaining[t] = idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    tokens, scores = [], []
    while remaining and len(tokens) < n:
        best = None
        for t, s in remaining.items():
            if best is None or s > remaining[best] or (s == remaining[best] and t < best):
                best = t
        tokens.append(best)
        scores.append(remaining.pop(best))
    while len(tokens) < n:
        tokens.append(pad_id)
        scores.append(0.0)
    return tokens, scores


# -- prefix-aware negatives -------------------------------------------------------


def shared_prefix(a: Sequence[int], b: Sequence[int]) -> int:
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    return k


def prefix_negatives(ids: Mapping[str, Sequence[int]], target: str, n_neg: int, rng: np.random.Generator) -> list[str]:
    """Sort every other doc by shared-prefix depth (desc) then doc_id; take
    whole depth groups, sampling inside the first group that overflows."""
    if n_neg <= 0:
        return []
    others = [d for d in ids if d != target]
    depth = {d: shared_prefix(ids[d], ids[target]) for d in others}
    out: list[str] = []
    for k in sorted(set(depth.values()), reverse=True):
        group = sorted(d for d in others if depth[d] == k)
        room = n_neg - len(out)
        if room <= 0:
            break
        if len(group) <= room:
            out += group
        else:
            idx = rng.choice(len(group), size=room, replace=False)
            out += sorted(group[i] for i in idx)
    return out


# -- retrieval ------------------------------------------------------------------------


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    for i, row in enumerate(logits):
        mx = max(row)
        lse = mx + math.log(sum(math.exp(v - mx) for v in row))
        out[i] = [v - lse for v in row]
    return out


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def brute_force_ranking(
    score_of: Callable[[tuple[int, ...]], float],
    w_query: Callable[[tuple[int, ...]], Sequence[float]],
    assignments: Sequence[tuple[str, tuple[int, ...], tuple[float, ...]]],
) -> list[str]:
    """Score every stored (identifier, doc) pair exhaustively and sort by
    (identifier score desc, identifier asc, cosine desc, doc_id asc)."""
    rows = []
    for doc_id, ident, w_doc in assignments:
        rows.append((-score_of(ident), ident, -cosine(w_query(ident), w_doc), doc_id))
    rows.sort()
    return [r[3] for r in rows]


def hidden_mode_scorer(hiddens: np.ndarray, E: np.ndarray):
    """(score_of, w_query) for a hidden-feedback model from raw [n, m] states."""
    lp = log_softmax_rows(hiddens @ E.T)

    def score_of(z):
        return sum(float(lp[t][tok]) for t, tok in enumerate(z))

    def w_query(z):
        return [float(hiddens[t] @ E[tok]) for t, tok in enumerate(z)]

    return score_of, w_query


def token_mode_scorer(model, query_tokens: Sequence[int]):
    """(score_of, w_query) for a token-feedback model via teacher forcing."""
    E = model.E.detach().numpy()
    cache = {}

    def states(z):
        if z not in cache:
            with torch.no_grad():
                cache[z] = model.hiddens([list(query_tokens)], feed=torch.tensor([list(z)]))[0].numpy()
        return cache[z]

    def score_of(z):
        h = states(z)
        lp = log_softmax_rows(h @ E.T)
        return sum(float(lp[t][tok]) for t, tok in enumerate(z))

    def w_query(z):
        h = states(z)
        return [float(h[t] @ E[tok]) for t, tok in enumerate(z)]

    return score_of, w_query


# -- finite differences -----------------------------------------------------------------


def sample_coordinates(model: torch.nn.Module, count: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """``count`` distinct (parameter name, flat index) pairs, spread over every block."""
    params = dict(model.named_parameters())
    names = sorted(params)
    per = max(1, count // len(names) + 1)
    coords = []
    for name in names:
        size = params[name].numel()
        for i in rng.choice(size, size=min(per, size), replace=False):
            coords.append((name, int(i)))
    return coords


def central_differences(
    loss_fn: Callable[[torch.nn.Module], torch.Tensor],
    model: torch.nn.Module,
    coords: Sequence[tuple[str, int]],
    h: float = 1e-5,
) -> list[float]:
    params = dict(model.named_parameters())
    out = []
    with torch.no_grad():
        for name, i in coords:
            flat = params[name].view(-1)
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_fn(model).item()
            flat[i] = orig - h
            down = loss_fn(model).item()
            flat[i] = orig
            out.append((up - down) / (2 * h))
    return out


def relative_errors(analytic: Sequence[float], numeric: Sequence[float], floor: float = 1e-8) -> list[float]:
    return [abs(a - f) / max(abs(a), abs(f), floor) for a, f in zip(analytic, numeric)]


def all_identifiers(alphabet: Sequence[int], n: int) -> list[tuple[int, ...]]:
    return list(itertools.product(alphabet, repeat=n))
