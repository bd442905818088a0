import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from glen.corpus import Document
from glen.id_index import (
    IdAssignment,
    IdentifierTrie,
    IdIndexError,
    prefix_negatives,
    random_negatives,
    read_id_table,
    refresh,
    write_id_table,
)
from glen.model import GlenModel, ModelConfig

a, b, c, d, e, f = range(6)


def table(*idents):
    return [IdAssignment(f"d{i}", tuple(z), tuple(float(t) for t in z)) for i, z in enumerate(idents)]


FIXTURE = table((a, b), (a, b), (a, c), (d, e), (d, f))


def test_single_document():
    trie = IdentifierTrie.build(table((a, b, c)))
    assert trie.leaf_count() == 1 and trie.bucket_size("d0") == 1


def test_identical_identifiers_collide():
    trie = IdentifierTrie.build(table((a, b), (a, b)))
    assert trie.leaf_count() == 1 and trie.bucket_size("d1") == 2


def test_fixture_leaves_and_buckets():
    trie = IdentifierTrie.build(FIXTURE)
    leaves = list(trie.leaves())
    assert [z for z, _ in leaves] == [(a, b), (a, c), (d, e), (d, f)]
    assert [len(bk) for _, bk in leaves] == [2, 1, 1, 1]
    assert [x.doc_id for x in trie.bucket((a, b))] == ["d0", "d1"]


def test_valid_children():
    trie = IdentifierTrie.build(FIXTURE)
    assert trie.valid_children(()) == {a, d}
    assert trie.valid_children((a,)) == {b, c}
    assert trie.valid_children((a, b)) == set()
    assert trie.valid_children((f,)) == set()


def test_bucket_order_ignores_insertion_order():
    shuffled = [FIXTURE[i] for i in (4, 1, 3, 0, 2)]
    assert IdentifierTrie.build(shuffled).serialize() == IdentifierTrie.build(FIXTURE).serialize()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_trie_invariants(idents):
    trie = IdentifierTrie.build(table(*idents))
    stored = []
    for z, bucket in trie.leaves():
        assert len(z) == 3
        ids = [x.doc_id for x in bucket]
        assert ids == sorted(ids)
        stored += ids
    assert sorted(stored) == sorted(f"d{i}" for i in range(len(idents)))
    assert trie.leaf_count() == len(set(idents))


@pytest.mark.parametrize(
    "bad",
    [
        [],
        table((a, b), (a,)),
        [IdAssignment("x", (a,), (1.0,)), IdAssignment("x", (b,), (1.0,))],
        [IdAssignment("x", (a,), (float("nan"),))],
    ],
)
def test_build_rejects_bad_tables(bad):
    with pytest.raises(IdIndexError):
        IdentifierTrie.build(bad)


def test_tiers_group_by_shared_prefix():
    trie = IdentifierTrie.build(FIXTURE)
    assert trie.tiers("d0") == [["d1"], ["d2"], ["d3", "d4"]]


# -- negatives -------------------------------------------------------------------------


def test_no_negatives_requested():
    trie = IdentifierTrie.build(FIXTURE)
    assert prefix_negatives(trie, "d0", 0, np.random.default_rng(0)) == []


def test_two_document_corpus_exhausts():
    trie = IdentifierTrie.build(table((a, b), (c, d)))
    assert prefix_negatives(trie, "d0", 8, np.random.default_rng(0)) == ["d1"]


def test_fixture_prefers_deepest_prefix():
    trie = IdentifierTrie.build(table((a, b), (a, b), (a, c), (d, e)))
    assert prefix_negatives(trie, "d0", 2, np.random.default_rng(0)) == ["d1", "d2"]


def test_overflowing_tier_is_sampled():
    trie = IdentifierTrie.build(table((a, b), (a, c), (a, d), (a, e), (a, f)))
    seen = set()
    for seed in range(30):
        negs = prefix_negatives(trie, "d0", 2, np.random.default_rng(seed))
        assert len(negs) == 2 and len(set(negs)) == 2 and "d0" not in negs
        seen.update(negs)
    assert seen == {"d1", "d2", "d3", "d4"}


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)), min_size=2, max_size=60),
    st.integers(0, 12),
    st.integers(0, 2**32 - 1),
)
def test_negatives_match_oracle(idents, n_neg, seed):
    assignments = table(*idents)
    trie = IdentifierTrie.build(assignments)
    ids = {x.doc_id: x.identifier for x in assignments}
    got = prefix_negatives(trie, "d0", n_neg, np.random.default_rng(seed))
    assert got == oracles.prefix_negatives(ids, "d0", n_neg, np.random.default_rng(seed))


def test_random_negatives():
    trie = IdentifierTrie.build(FIXTURE)
    negs = random_negatives(trie, "d2", 3, np.random.default_rng(0))
    assert len(negs) == 3 and "d2" not in negs
    assert random_negatives(trie, "d2", 10, np.random.default_rng(0)) == ["d0", "d1", "d3", "d4"]


# -- refresh ----------------------------------------------------------------------------


def tiny_model():
    return GlenModel(ModelConfig(vocab_size=24, n=3, m=8, enc_layers=1, dec_layers=1, seed=5))


DOCS = [Document("x", (0, 1, 2)), Document("y", (3, 4, 5, 6))]


def test_refresh_is_bit_identical_without_updates():
    model = tiny_model()
    assert refresh(model, DOCS).serialize() == refresh(model, DOCS).serialize()


def test_refresh_empty_corpus():
    with pytest.raises(IdIndexError):
        refresh(tiny_model(), [])


def test_update_moves_exactly_the_flipped_document():
    model = tiny_model()
    before = refresh(model, DOCS)
    with torch.no_grad():
        hx = model.hiddens([DOCS[0].tokens])[0]
        hy = model.hiddens([DOCS[1].tokens])[0]
    # a token neither document contains (so encodings stay put) and not x's first pick
    j = next(t for t in range(20) if t not in DOCS[0].tokens + DOCS[1].tokens and t != before.assignment("x").identifier[0])
    # push e_j along x's step-0 hidden state, orthogonally to every hidden state of y
    basis, _ = torch.linalg.qr(hy.T)
    u = hx[0] - basis @ (basis.T @ hx[0])
    logits = model.logits(hx[0])[:20]
    gap = (logits.max() - logits[j]).item()
    with torch.no_grad():
        model.E[j] += (gap + 1e-3) / (u @ hx[0]) * u
    after = refresh(model, DOCS)
    assert after.assignment("x").identifier[0] == j
    assert after.assignment("x").identifier != before.assignment("x").identifier
    assert after.assignment("y") == before.assignment("y")


# -- identifier table ----------------------------------------------------------------------


def test_id_table_round_trip(tmp_path):
    path = tmp_path / "ids.tsv"
    rows = [IdAssignment("q", (3, 1, 4), (0.1, -2.5, 1e-300)), IdAssignment("a", (1, 5, 9), (2.0, 6.0, 5.0))]
    write_id_table(path, rows)
    back = read_id_table(path)
    assert back == sorted(rows, key=lambda r: r.doc_id)
    assert path.read_text().startswith("a\t1,5,9\t")


@pytest.mark.parametrize("line", ["a\t1,2\n", "a\tx,y\t1,2\n", "a\t1,2\t1\n"])
def test_id_table_malformed(tmp_path, line):
    path = tmp_path / "ids.tsv"
    path.write_text(line)
    with pytest.raises(IdIndexError):
        read_id_table(path)
