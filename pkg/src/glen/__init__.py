"""Generative retrieval with learned lexical document identifiers.

Pipeline: BM25 keyword identifiers -> keyword-phase training -> ranking-based
refinement -> offline identifier assignment -> trie-constrained retrieval
with logit-based collision ranking -> Recall/MRR/nDCG evaluation.
"""

from .corpus import Document, QrelSet, Query, Vocabulary, build_vocab, tokenize
from .id_index import IdAssignment, IdentifierTrie, prefix_negatives
from .inference import RankedList, constrained_search, random_collision_rank, rel_id, retrieve
from .keyword_id import extract_keyword_id
from .model import GlenModel, ModelConfig
from .objectives import AnnealSchedule, TrainingConfig, loss_keyword, loss_pair, loss_point, loss_total

__all__ = [
    "AnnealSchedule",
    "Document",
    "GlenModel",
    "IdAssignment",
    "IdentifierTrie",
    "ModelConfig",
    "QrelSet",
    "Query",
    "RankedList",
    "TrainingConfig",
    "Vocabulary",
    "build_vocab",
    "constrained_search",
    "extract_keyword_id",
    "loss_keyword",
    "loss_pair",
    "loss_point",
    "loss_total",
    "prefix_negatives",
    "random_collision_rank",
    "rel_id",
    "retrieve",
    "tokenize",
]
