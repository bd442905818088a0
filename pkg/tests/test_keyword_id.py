import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from glen.corpus import Document, Vocabulary, make_documents
from glen.keyword_id import (
    KeywordError,
    compute_stats,
    extract_all,
    extract_keyword_id,
    read_keyword_table,
    term_score,
    write_keyword_table,
)


def docs_of(*token_lists):
    return [Document(f"d{i}", tuple(t)) for i, t in enumerate(token_lists)]


FIXTURE = docs_of([0, 0, 1, 2], [0, 3], [1, 1, 1, 4, 5, 6], [2, 3])


def test_stats_single_doc():
    stats = compute_stats(docs_of([0, 0, 1]))
    assert stats.df == {0: 1, 1: 1}
    assert stats.doc_len == {"d0": 3}
    assert stats.avg_doc_len == 3


def test_stats_two_docs():
    stats = compute_stats(docs_of([0], [0, 1]))
    assert stats.df == {0: 2, 1: 1}
    assert stats.avg_doc_len == 1.5


def test_stats_hand_tally():
    stats = compute_stats(FIXTURE)
    assert stats.df == {0: 2, 1: 2, 2: 2, 3: 2, 4: 1, 5: 1, 6: 1}
    assert stats.doc_len == {"d0": 4, "d1": 2, "d2": 6, "d3": 2}
    assert stats.avg_doc_len == 3.5
    assert all(1 <= c <= stats.doc_count for c in stats.df.values())


def test_stats_of_empty_corpus():
    with pytest.raises(KeywordError):
        compute_stats([])


def test_idf_of_ubiquitous_token():
    stats = compute_stats(docs_of([7, 8]))
    assert stats.idf(7) == pytest.approx(math.log(4 / 3), abs=1e-15)


def test_b_zero_ignores_length():
    stats = compute_stats(docs_of([0, 1], [0, 2, 2, 2, 2, 2, 2]))
    short, long = docs_of([0, 1], [0, 2, 2, 2, 2, 2, 2])
    assert term_score(0, short, stats, b=0.0) == term_score(0, long, stats, b=0.0)
    assert term_score(0, short, stats) != term_score(0, long, stats)


def test_hand_evaluated_bm25():
    stats = compute_stats(FIXTURE)
    # token 0 in d0: tf=2, idf=ln(2.5/2.5+1)=ln 2, norm=0.25+0.75*4/3.5
    assert term_score(0, FIXTURE[0], stats) == pytest.approx(0.916263225804563, abs=1e-12)
    # token 4 in d2: tf=1, idf=ln(3.5/1.5+1), norm=0.25+0.75*6/3.5
    assert term_score(4, FIXTURE[2], stats) == pytest.approx(0.9317176475688149, abs=1e-12)


def test_term_score_rejects_absent_token_and_bad_params():
    stats = compute_stats(FIXTURE)
    with pytest.raises(KeywordError):
        term_score(6, FIXTURE[0], stats)
    with pytest.raises(ValueError):
        term_score(0, FIXTURE[0], stats, k1=0)
    with pytest.raises(ValueError):
        term_score(0, FIXTURE[0], stats, b=1.5)


def test_forced_selection_is_score_ordered():
    stats = compute_stats(FIXTURE)
    kid = extract_keyword_id(FIXTURE[0], stats, n=3)
    assert sorted(kid.tokens) == [0, 1, 2]
    assert list(kid.scores) == sorted(kid.scores, reverse=True)
    assert not kid.degenerate


def test_rarest_word_wins():
    vocab = Vocabulary.from_tokens(["games", "list", "olympic", "sports", "the"])
    raw = [("a", "olympic olympic games list"), ("b", "games list the"), ("c", "sports games list"), ("d", "the list")]
    docs = make_documents(raw, vocab)
    kid = extract_keyword_id(docs[0], compute_stats(docs), n=3)
    assert vocab.decode(kid.tokens)[0] == "olympic"


def test_short_document_is_padded():
    stats = compute_stats(FIXTURE)
    kid = extract_keyword_id(FIXTURE[1], stats, n=3, pad_id=99)
    assert kid.tokens[2] == 99 and kid.scores[2] == 0.0
    assert set(kid.tokens[:2]) == {0, 3}
    assert kid.degenerate


def test_stopwords_are_skipped():
    stats = compute_stats(FIXTURE)
    kid = extract_keyword_id(FIXTURE[2], stats, n=2, stopwords={4, 5})
    assert 4 not in kid.tokens and 5 not in kid.tokens
    with pytest.raises(KeywordError):
        extract_keyword_id(FIXTURE[1], stats, n=2, stopwords={0, 3})


def test_ties_break_by_token_id():
    docs = docs_of([5, 3, 9], [1])
    kid = extract_keyword_id(docs[0], compute_stats(docs), n=2)
    assert kid.tokens == (3, 5)


corpora = st.lists(st.lists(st.integers(0, 12), min_size=1, max_size=12), min_size=1, max_size=100)


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(1, 4), st.frozensets(st.integers(0, 12), max_size=3))
def test_matches_bruteforce_oracle(token_lists, n, stop):
    docs = docs_of(*token_lists)
    stats = compute_stats(docs)
    for doc in docs:
        if not set(doc.tokens) - stop:
            continue
        kid = extract_keyword_id(doc, stats, n, stop, pad_id=13)
        tokens, scores = oracles.bm25_keywords(doc.tokens, token_lists, n, stop, pad_id=13)
        assert list(kid.tokens) == tokens
        assert kid.scores == pytest.approx(scores, abs=1e-12)
        assert len(set(t for t in kid.tokens if t != 13)) == len([t for t in kid.tokens if t != 13])


def test_keyword_table_round_trip(tmp_path):
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(7)])
    table = extract_all(FIXTURE, compute_stats(FIXTURE), 3, vocab)
    path = tmp_path / "k.tsv"
    write_keyword_table(path, table, vocab)
    back = read_keyword_table(path, vocab)
    assert back == {d: kid.tokens for d, kid in table.items()}
    first = path.read_bytes()
    write_keyword_table(path, table, vocab)
    assert path.read_bytes() == first
