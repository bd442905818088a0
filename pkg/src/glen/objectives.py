"""Training losses for both index-learning phases and the training loop.

Phase ``keyword`` teaches the model to emit each document's BM25 keyword
identifier, from the document and from its training queries. Phase
``refine`` optimises

    L = L_pair + lambda_point * L_point

where L_pair contrasts a query against its positive document and against
prefix-aware dynamic negatives plus in-batch negatives, using soft
identifier representations r_t = softmax(d_t E^T / tau) E, and L_point is
cross-entropy towards the positive's current greedy identifier plus a
cosine distance between query and document identifier logits.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import Document, QrelSet, Query
from .fileio import atomic_write_text
from .id_index import IdentifierTrie, prefix_negatives, random_negatives, refresh
from .model import GlenModel

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    floor: float = 1e-5
    annealing: bool = True

    def tau(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        if not self.annealing:
            return self.floor
        return max(self.floor, math.exp(-epoch))


@dataclass
class TrainingConfig:
    lambda_point: float = 0.5
    lambda_dist: float = 0.5
    n_neg: int = 8
    in_batch_negatives: bool = True
    batch_size: int = 32
    optimizer: str = "sgd"  # or "adam"
    keyword_lr: float = 0.05
    refine_lr: float = 0.05
    keyword_epochs: int = 10
    refine_epochs: int = 10
    max_steps: int | None = None  # per phase; None = run every epoch to completion
    tau_floor: float = 1e-5
    # documents per query example in the keyword phase (1 = 1:1 interleaving)
    doc_query_ratio: int = 1
    seed: int = 0
    no_keyword_phase: bool = False
    no_annealing: bool = False
    token_decoder_input: bool = False
    no_pairwise: bool = False
    no_pointwise: bool = False
    random_negatives: bool = False
    no_refinement: bool = False

    def __post_init__(self):
        if self.lambda_point < 0 or self.lambda_dist < 0:
            raise ValueError("loss weights must be >= 0")
        if self.n_neg < 0:
            raise ValueError("n_neg must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.tau_floor, not self.no_annealing)


# -- tensor-level losses ------------------------------------------------------


def keyword_ce(log_probs: torch.Tensor, targets: torch.Tensor, pad_id: int) -> torch.Tensor:
    """Per-example -sum_t log P(target_t); PAD targets are masked out. [B]"""
    mask = targets != pad_id
    if not mask.any(dim=-1).all():
        raise ValueError("keyword target is entirely padding")
    picked = log_probs.gather(-1, targets.clamp(min=0)[..., None])[..., 0]
    return -(picked * mask).sum(-1)


def identifier_repr(hidden: torch.Tensor, E: torch.Tensor, tau: float) -> torch.Tensor:
    """Soft identifier embedding softmax(h E^T / tau) E."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return torch.softmax(hidden @ E.T / tau, dim=-1) @ E


def rel_score(query_hiddens: torch.Tensor, doc_hiddens: torch.Tensor, E: torch.Tensor, tau: float) -> torch.Tensor:
    """sum_t q_t . r_t for one query/document pair of [n, m] hidden states."""
    if query_hiddens.shape != doc_hiddens.shape:
        raise ValueError(f"shape mismatch: {tuple(query_hiddens.shape)} vs {tuple(doc_hiddens.shape)}")
    return (query_hiddens * identifier_repr(doc_hiddens, E, tau)).sum()


def rel_matrix(query_hiddens: torch.Tensor, doc_hiddens: torch.Tensor, E: torch.Tensor, tau: float) -> torch.Tensor:
    """[B, n, m] x [D, n, m] -> [B, D] relevance scores."""
    r = identifier_repr(doc_hiddens, E, tau)
    return torch.einsum("btm,dtm->bd", query_hiddens, r)


def pair_ce(pos: torch.Tensor, neg: torch.Tensor, neg_mask: torch.Tensor | None = None) -> torch.Tensor:
    """-log softmax of the positive among positive + negatives. [B]

    logsumexp subtracts the row max, so the loss is stable and invariant to
    a shared shift of all scores.
    """
    if neg_mask is not None:
        neg = neg.masked_fill(~neg_mask, float("-inf"))
    return torch.logsumexp(torch.cat([pos[:, None], neg], dim=1), dim=1) - pos


def cosine_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """1 - cos(a, b) over the last axis; defined as 1 when either side is zero."""
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    zero = (na == 0) | (nb == 0)
    if zero.any():
        log.debug("zero-norm identifier weights in %d example(s); distance set to 1", int(zero.sum()))
    denom = torch.where(zero, torch.ones_like(na), na * nb)
    cos = torch.where(zero, torch.zeros_like(na), (a * b).sum(-1) / denom)
    return 1.0 - cos


def point_ce(
    query_log_probs: torch.Tensor,
    query_hiddens: torch.Tensor,
    E: torch.Tensor,
    z_pos: torch.Tensor,
    w_doc: torch.Tensor,
    lambda_dist: float,
) -> torch.Tensor:
    """Per-example pointwise loss. [B]"""
    ce = -query_log_probs.gather(-1, z_pos[..., None])[..., 0].sum(-1)
    w_query = (query_hiddens * E[z_pos]).sum(-1)
    return ce + lambda_dist * cosine_distance(w_query, w_doc)


# -- model-level losses (one query / document at a time) ------------------------


def _feed(model: GlenModel, tokens: Sequence[int] | None) -> torch.Tensor | None:
    if tokens is None or not model.config.token_decoder_input:
        return None
    return torch.tensor([list(tokens)], dtype=torch.long)


def loss_keyword(model: GlenModel, input_tokens: Sequence[int], target: Sequence[int]) -> torch.Tensor:
    target = list(getattr(target, "tokens", target))
    if len(target) != model.config.n:
        raise ValueError(f"target length {len(target)} != identifier length {model.config.n}")
    h = model.hiddens([input_tokens], feed=_feed(model, target))
    return keyword_ce(model.log_prob(h), torch.tensor([target]), model.config.pad_id)[0]


def positive_identifier(model: GlenModel, doc_tokens: Sequence[int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Greedy identifier of a document (no gradient) and its differentiable logits w^d."""
    h = model.hiddens([doc_tokens])[0]
    z = model.content_argmax(h.detach())
    return z, (h * model.E[z]).sum(-1)


def loss_pair(
    model: GlenModel,
    query_tokens: Sequence[int],
    positive_tokens: Sequence[int],
    negatives: Sequence[Sequence[int]],
    tau: float,
) -> torch.Tensor:
    if not negatives:
        warnings.warn("pairwise loss with no negatives is identically zero", stacklevel=2)
    qh = model.hiddens([query_tokens])
    dh = model.hiddens([positive_tokens, *negatives])
    scores = rel_matrix(qh, dh, model.E, tau)[0]
    return pair_ce(scores[:1], scores[None, 1:])[0]


def loss_point(
    model: GlenModel,
    query_tokens: Sequence[int],
    positive_tokens: Sequence[int],
    lambda_dist: float = 0.5,
    z_pos: Sequence[int] | None = None,
) -> torch.Tensor:
    """Pointwise loss; ``z_pos`` pins the positive identifier (else greedy)."""
    h = model.hiddens([positive_tokens])[0]
    z = model.content_argmax(h.detach()) if z_pos is None else torch.tensor(list(z_pos), dtype=torch.long)
    w_doc = (h * model.E[z]).sum(-1)
    qh = model.hiddens([query_tokens], feed=_feed(model, z.tolist()))
    return point_ce(model.log_prob(qh), qh, model.E, z[None], w_doc[None], lambda_dist)[0]


def loss_total(
    model: GlenModel,
    query_tokens: Sequence[int],
    positive_tokens: Sequence[int],
    negatives: Sequence[Sequence[int]],
    tau: float,
    cfg: TrainingConfig,
    z_pos: Sequence[int] | None = None,
) -> torch.Tensor:
    total = torch.zeros((), dtype=model.E.dtype)
    if not cfg.no_pairwise:
        total = total + loss_pair(model, query_tokens, positive_tokens, negatives, tau)
    if not cfg.no_pointwise:
        total = total + cfg.lambda_point * loss_point(model, query_tokens, positive_tokens, cfg.lambda_dist, z_pos)
    return total


# -- training loop --------------------------------------------------------------


@dataclass
class TrainingData:
    docs: Mapping[str, Document]
    queries: Mapping[str, Query]
    qrels: QrelSet
    keyword_ids: Mapping[str, Sequence[int]] = field(default_factory=dict)

    def pairs(self) -> list[tuple[str, str]]:
        return [(q, d) for q, d in self.qrels.pairs() if q in self.queries and d in self.docs]


def _optimizer(model: GlenModel, cfg: TrainingConfig, lr: float) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=lr)
    return torch.optim.SGD(model.parameters(), lr=lr)


def _batches(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def keyword_examples(data: TrainingData, rng: np.random.Generator, ratio: int = 1) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """One epoch of (input tokens, keyword target): shuffled documents and
    queries interleaved ``ratio`` documents per query."""
    doc_ex = [(data.docs[d].tokens, tuple(data.keyword_ids[d])) for d in sorted(data.docs)]
    query_ex = [(data.queries[q].tokens, tuple(data.keyword_ids[d])) for q, d in data.pairs()]
    doc_ex = [doc_ex[i] for i in rng.permutation(len(doc_ex))]
    query_ex = [query_ex[i] for i in rng.permutation(len(query_ex))]
    out = []
    di = qi = 0
    while di < len(doc_ex) or qi < len(query_ex):
        out.extend(doc_ex[di : di + ratio])
        di += ratio
        if qi < len(query_ex):
            out.append(query_ex[qi])
            qi += 1
    return out


def _check_finite(value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value):
        raise TrainingDivergence(f"non-finite loss at batch {step}")


def train_keyword(model: GlenModel, data: TrainingData, cfg: TrainingConfig) -> list[dict]:
    rng = np.random.default_rng(cfg.seed)
    opt = _optimizer(model, cfg, cfg.keyword_lr)
    pad = model.config.pad_id
    trace: list[dict] = []
    step = 0
    for epoch in range(cfg.keyword_epochs):
        examples = [ex for ex in keyword_examples(data, rng, cfg.doc_query_ratio) if any(t != pad for t in ex[1])]
        for batch in _batches(examples, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return trace
            targets = torch.tensor([t for _, t in batch], dtype=torch.long)
            h = model.hiddens([x for x, _ in batch], feed=targets if model.config.token_decoder_input else None)
            loss = keyword_ce(model.log_prob(h), targets, pad).mean()
            _check_finite(loss, step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            trace.append({"step": step, "epoch": epoch, "L_key": loss.item()})
            step += 1
        log.info("keyword epoch %d: mean L_key %.4f", epoch, _epoch_mean(trace, epoch, "L_key"))
    return trace


def _epoch_mean(trace: list[dict], epoch: int, key: str) -> float:
    vals = [r[key] for r in trace if r["epoch"] == epoch]
    return float(np.mean(vals)) if vals else float("nan")


def train_refine(model: GlenModel, data: TrainingData, cfg: TrainingConfig) -> list[dict]:
    rng = np.random.default_rng(cfg.seed + 1)
    opt = _optimizer(model, cfg, cfg.refine_lr)
    schedule = cfg.schedule
    pairs = data.pairs()
    sample = random_negatives if cfg.random_negatives else prefix_negatives
    token_mode = model.config.token_decoder_input
    trace: list[dict] = []
    step = 0
    for epoch in range(cfg.refine_epochs):
        tau = schedule.tau(epoch)
        trie: IdentifierTrie = refresh(model, data.docs.values())
        order = [pairs[i] for i in rng.permutation(len(pairs))]
        for batch in _batches(order, cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return trace
            positives = [d for _, d in batch]
            negs = [sample(trie, d, cfg.n_neg, rng) for d in positives]
            pool = sorted(set(positives).union(*negs))
            col = {d: i for i, d in enumerate(pool)}
            dh = model.hiddens([data.docs[d].tokens for d in pool])
            pos_idx = torch.tensor([col[d] for d in positives])
            dh_pos = dh[pos_idx]
            z_pos = model.content_argmax(dh_pos.detach())
            w_doc = (dh_pos * model.E[z_pos]).sum(-1)
            qh = model.hiddens([data.queries[q].tokens for q, _ in batch], feed=z_pos if token_mode else None)

            L_pair = torch.zeros((), dtype=dh.dtype)
            L_point = torch.zeros((), dtype=dh.dtype)
            if not cfg.no_pairwise:
                neg_mask = torch.zeros(len(batch), len(pool), dtype=torch.bool)
                for i, (d, nd) in enumerate(zip(positives, negs)):
                    cand = set(nd)
                    if cfg.in_batch_negatives:
                        cand.update(positives)
                    cand.discard(d)
                    for c in cand:
                        neg_mask[i, col[c]] = True
                scores = rel_matrix(qh, dh, model.E, tau)
                pos_scores = scores.gather(1, pos_idx[:, None])[:, 0]
                L_pair = pair_ce(pos_scores, scores, neg_mask).mean()
            if not cfg.no_pointwise:
                L_point = point_ce(model.log_prob(qh), qh, model.E, z_pos, w_doc, cfg.lambda_dist).mean()
            loss = L_pair + cfg.lambda_point * L_point
            _check_finite(loss, step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            trace.append(
                {"step": step, "epoch": epoch, "tau": tau, "L_pair": L_pair.item(), "L_point": L_point.item(), "L_total": loss.item()}
            )
            step += 1
        log.info(
            "refine epoch %d (tau=%.3g, %d leaves): mean L %.4f", epoch, tau, trie.leaf_count(), _epoch_mean(trace, epoch, "L_total")
        )
    return trace


def train_phase(phase: str, model: GlenModel, data: TrainingData, cfg: TrainingConfig) -> list[dict]:
    """Run one training phase in place; returns the per-step loss trace."""
    if phase == "keyword":
        return train_keyword(model, data, cfg)
    if phase == "refine":
        return train_refine(model, data, cfg)
    raise ValueError(f"unknown phase {phase!r}")


TRACE_COLUMNS = {
    "keyword": ["step", "L_key"],
    "refine": ["step", "epoch", "tau", "L_pair", "L_point", "L_total"],
}


def format_trace(trace: list[dict], phase: str) -> str:
    cols = TRACE_COLUMNS[phase]
    lines = [",".join(cols)]
    for row in trace:
        lines.append(",".join(str(row[c]) if isinstance(row[c], int) else format(row[c], ".17g") for c in cols))
    return "\n".join(lines) + "\n"


def write_trace(path: str | Path, trace: list[dict], phase: str) -> None:
    atomic_write_text(path, format_trace(trace, phase))
