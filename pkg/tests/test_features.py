import math
from random import Random

import numpy as np
import pytest

from stagegate.corpus import Message
from stagegate.features import (
    DESC_NAMES,
    BowMode,
    DescFeatures,
    EmbeddedMessage,
    EmptyCorpus,
    EmptyEmbeddingTable,
    FeatureError,
    FeatureSpace,
    IdfMissing,
    SparseVector,
    assemble,
    bow_vector,
    build_vocabulary,
    desc_features,
    embed_matrix,
    extract_ngrams,
    fit_idf,
    load_feature_matrix,
    pos_feature_names,
    pos_features,
    save_feature_matrix,
)
from stagegate.embeddings import EmbeddingTable
from stagegate.textprep import ClauseSpan, ProcessedMessage, Token


def processed(words, tags=None, text=None, likes=0, clauses=()):
    tags = tags or ["NN"] * len(words)
    msg = Message(id="t", text=text if text is not None else " ".join(words), likes=likes)
    toks = tuple(Token(w, w.lower(), i) for i, w in enumerate(words))
    return ProcessedMessage(
        source=msg, normalized_text=msg.text, tokens=toks, tags=tuple(tags),
        clauses=tuple(clauses),
    )


# --- brute-force tf-idf oracle, independent of the features module ----------


def brute_force_tfidf(docs_lemmas, orders, min_df=1):
    """Reference implementation: returns (sorted ngram list, dense rows)."""
    def ngrams(lemmas):
        out = []
        for n in sorted(set(orders)):
            for i in range(len(lemmas) - n + 1):
                out.append(" ".join(lemmas[i : i + n]))
        return out

    df = {}
    for doc in docs_lemmas:
        for g in set(ngrams(doc)):
            df[g] = df.get(g, 0) + 1
    vocab = sorted(g for g, c in df.items() if c >= min_df)
    index = {g: i for i, g in enumerate(vocab)}
    n_docs = len(docs_lemmas)
    rows = []
    for doc in docs_lemmas:
        row = [0.0] * len(vocab)
        for g in ngrams(doc):
            if g in index:
                row[index[g]] += 1.0
        for g, i in index.items():
            idf = math.log((1.0 + n_docs) / (1.0 + df[g])) + 1.0
            row[i] *= idf
        norm = math.sqrt(sum(v * v for v in row))
        if norm > 0:
            row = [v / norm for v in row]
        rows.append(row)
    return vocab, rows


class TestSparseVector:
    def test_drops_zeros_and_sorts(self):
        v = SparseVector([5, 1, 3], [1.0, 0.0, 2.0], dim=10)
        assert list(v.indices) == [3, 5]
        assert list(v.values) == [2.0, 1.0]

    def test_rejects_out_of_range(self):
        with pytest.raises(FeatureError):
            SparseVector([10], [1.0], dim=10)

    def test_rejects_duplicates(self):
        with pytest.raises(FeatureError):
            SparseVector([1, 1], [1.0, 2.0], dim=4)

    def test_dense_roundtrip(self):
        arr = np.array([0.0, 2.5, 0.0, -1.0])
        assert np.array_equal(SparseVector.from_dense(arr).to_dense(), arr)


class TestNgrams:
    def test_single_trigram(self):
        assert extract_ngrams(["a", "b", "c"], {3}) == {"a b c": 1}

    def test_multiplicity(self):
        assert extract_ngrams(["a", "a", "b"], {1}) == {"a": 2, "b": 1}

    def test_bigram_count_formula(self):
        # len - n + 1 contiguous n-grams, checked by enumeration
        for n_tokens in range(1, 8):
            tokens = [f"w{i}" for i in range(n_tokens)]
            for order in (1, 2, 3):
                got = sum(extract_ngrams(tokens, {order}).values())
                assert got == max(0, n_tokens - order + 1)

    def test_combined_orders(self):
        grams = extract_ngrams(["a", "b"], {1, 2})
        assert grams == {"a": 1, "b": 1, "a b": 1}


class TestVocabulary:
    def test_min_df_threshold(self):
        docs = [processed(["storm", "x"]), processed(["storm", "y"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=2)
        assert list(vocab.index) == ["storm"]

    def test_min_df_one_matches_enumeration(self):
        rng = Random(3)
        docs = [processed([rng.choice("abcde") for _ in range(6)]) for _ in range(8)]
        vocab = build_vocabulary(docs, orders={1, 2}, min_df=1)
        expected = set()
        for d in docs:
            lem = d.lemmas()
            expected.update(lem)
            expected.update(" ".join(p) for p in zip(lem, lem[1:]))
        assert set(vocab.index) == expected

    def test_deterministic_rebuild(self):
        docs = [processed(["b", "a", "c"]), processed(["a", "c"])]
        v1 = build_vocabulary(docs, orders={1}, min_df=1)
        v2 = build_vocabulary(docs, orders={1}, min_df=1)
        assert v1.index == v2.index

    def test_lexicographic_indices(self):
        docs = [processed(["zebra", "apple", "mango"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=1)
        assert vocab.names() == sorted(vocab.names())

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_vocabulary([], orders={1}, min_df=1)


class TestBowVector:
    def test_tfidf_matches_brute_force_toy(self):
        rng = Random(11)
        docs_lemmas = [[rng.choice("abcdef") for _ in range(rng.randint(2, 9))] for _ in range(5)]
        docs = [processed(d) for d in docs_lemmas]
        vocab = build_vocabulary(docs, orders={1, 2, 3}, min_df=1)
        idf = fit_idf(vocab)
        oracle_vocab, oracle_rows = brute_force_tfidf(docs_lemmas, {1, 2, 3})
        assert vocab.names() == oracle_vocab
        for doc, expect in zip(docs, oracle_rows):
            got = bow_vector(doc, vocab, BowMode.TFIDF, idf).to_dense()
            assert np.allclose(got, expect, atol=1e-9)

    def test_bool_and_freq_values(self):
        docs = [processed(["a", "a", "b"]), processed(["b"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=1)
        boolv = bow_vector(docs[0], vocab, BowMode.BOOL)
        freqv = bow_vector(docs[0], vocab, BowMode.FREQ)
        assert set(boolv.values) == {1.0}
        assert sorted(freqv.values) == [1.0, 2.0]

    def test_oov_only_message_is_zero_vector(self):
        docs = [processed(["a", "b"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=1)
        idf = fit_idf(vocab)
        v = bow_vector(processed(["zzz", "qqq"]), vocab, BowMode.TFIDF, idf)
        assert v.nnz() == 0
        assert v.dim == len(vocab)

    def test_tfidf_requires_idf(self):
        docs = [processed(["a"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=1)
        with pytest.raises(IdfMissing):
            bow_vector(docs[0], vocab, BowMode.TFIDF)

    def test_tfidf_norm_is_unit_or_zero(self):
        rng = Random(5)
        docs = [processed([rng.choice("abcd") for _ in range(rng.randint(1, 6))]) for _ in range(6)]
        vocab = build_vocabulary(docs, orders={1, 2}, min_df=1)
        idf = fit_idf(vocab)
        for d in docs:
            norm = bow_vector(d, vocab, BowMode.TFIDF, idf).l2_norm()
            assert abs(norm - 1.0) < 1e-9 or norm == 0.0

    def test_unigram_order_invariance(self):
        docs = [processed(["a", "b", "c"])]
        vocab = build_vocabulary(docs, orders={1}, min_df=1)
        v1 = bow_vector(processed(["a", "b", "c"]), vocab, BowMode.FREQ)
        v2 = bow_vector(processed(["c", "a", "b"]), vocab, BowMode.FREQ)
        assert v1 == v2


class TestPosFeatures:
    def test_direct_count(self):
        pm = processed(["the", "dog", "dogs"], tags=["DT", "NN", "NNS"])
        v = pos_features(pm, two_letter=False)
        names = pos_feature_names(False)
        got = {names[i]: val for i, val in zip(v.indices, v.values)}
        assert got == {"DT": 1.0, "NN": 1.0, "NNS": 1.0}

    def test_two_letter_merges(self):
        pm = processed(["dog", "dogs"], tags=["NN", "NNS"])
        v = pos_features(pm, two_letter=True)
        names = pos_feature_names(True)
        got = {names[i]: val for i, val in zip(v.indices, v.values)}
        assert got == {"NN": 2.0}

    def test_clause_tags_counted(self):
        pm = processed(
            ["has", "completed"], tags=["VBZ", "VBN"],
            clauses=[ClauseSpan(0, 2, "VerbPast")],
        )
        v = pos_features(pm)
        names = pos_feature_names(False)
        got = {names[i]: val for i, val in zip(v.indices, v.values)}
        assert got == {"VBZ": 1.0, "VBN": 1.0, "VerbPast": 1.0}

    def test_composite_unaffected_by_two_letter(self):
        assert pos_feature_names(True)[-3:] == ["VerbPast", "VerbPresent", "VerbFuture"]


class TestDescFeatures:
    def test_hand_counted_example(self):
        msg = Message(id="1", text="STOP!! Now?", likes=3)
        d = desc_features(msg)
        assert d.word_count == 2
        assert d.likes == 3
        assert d.exclamations == 2
        assert d.questions == 1
        assert d.capital_ratio == pytest.approx(5 / 7)

    def test_degenerate_empty(self):
        d = desc_features(Message(id="1", text="", likes=0))
        assert d == DescFeatures(0, 0, 0, 0, 0.0)

    def test_exactly_five_components(self):
        d = desc_features(Message(id="1", text="hello world", likes=9))
        assert d.as_array().shape == (5,)
        assert len(DESC_NAMES) == 5


class TestAssemble:
    def test_dimension_arithmetic(self):
        bow = SparseVector([0, 9], [1.0, 1.0], dim=10)
        pos = SparseVector([1], [2.0], dim=4)
        desc = DescFeatures(3, 1, 0, 0, 0.5)
        out = assemble([bow, pos, desc])
        assert out.dim == 19

    def test_single_part_identity(self):
        v = SparseVector([2, 5], [1.5, -1.0], dim=8)
        assert assemble([v]) == v

    def test_nnz_preserved_random(self):
        rng = Random(2)
        for _ in range(30):
            parts = []
            for _ in range(rng.randint(1, 4)):
                dim = rng.randint(1, 12)
                nnz = rng.randint(0, dim)
                idx = sorted(rng.sample(range(dim), nnz))
                parts.append(SparseVector(idx, [rng.uniform(0.5, 2)] * nnz, dim))
            out = assemble(parts)
            assert out.nnz() == sum(p.nnz() for p in parts)
            assert out.dim == sum(p.dim for p in parts)

    def test_offsets_associative(self):
        a = SparseVector([0], [1.0], 2)
        b = SparseVector([1], [2.0], 3)
        c = SparseVector([0], [3.0], 1)
        left = assemble([assemble([a, b]), c])
        flat = assemble([a, b, c])
        assert left == flat

    def test_empty_parts(self):
        with pytest.raises(FeatureError):
            assemble([])


def toy_table(d=4, words=("storm", "road", "happy")):
    vecs = np.arange(len(words) * d, dtype=np.float32).reshape(len(words), d) + 1.0
    return EmbeddingTable(list(words), vecs)


class TestEmbedMatrix:
    def test_shape_and_padding(self):
        pm = processed(["storm", "road", "happy"])
        em = embed_matrix(pm, toy_table(d=100))
        assert em.matrix.shape == (100, 100)
        assert em.true_length == 3
        assert not em.matrix[3:].any()

    def test_truncation_to_first_100(self):
        words = [f"w{i}" for i in range(150)]
        table = EmbeddingTable(words, np.ones((150, 8), dtype=np.float32))
        pm = processed(words)
        em = embed_matrix(pm, table)
        assert em.true_length == 100
        assert em.matrix.shape == (100, 8)

    def test_desc_width_arithmetic(self):
        pm = processed(["storm"], text="storm alert", likes=2)
        table = EmbeddingTable(["storm"], np.ones((1, 300), dtype=np.float32))
        em = embed_matrix(pm, table, with_desc=True)
        assert em.matrix.shape == (100, 305)
        assert em.flattened().shape == (30500,)
        assert em.matrix[0, 300] == 2.0  # word_count of the raw text
        assert not em.matrix[1:].any()

    def test_oov_rows_zero(self):
        pm = processed(["storm", "zzz"])
        em = embed_matrix(pm, toy_table())
        assert em.matrix[0].any()
        assert not em.matrix[1].any()
        assert em.true_length == 2

    def test_padding_contract_random(self):
        rng = Random(8)
        table = toy_table(d=6)
        for _ in range(50):
            n = rng.randint(0, 130)
            pm = processed([rng.choice(["storm", "road", "zzz"]) for _ in range(n)])
            em = embed_matrix(pm, table)
            assert em.true_length == min(n, 100)
            assert not em.matrix[em.true_length :].any()

    def test_empty_table_rejected(self):
        table = EmbeddingTable([], np.zeros((0, 4), dtype=np.float32))
        with pytest.raises(EmptyEmbeddingTable):
            embed_matrix(processed(["a"]), table)

    def test_constructor_rejects_dirty_padding(self):
        m = np.ones((100, 4), dtype=np.float32)
        with pytest.raises(FeatureError):
            EmbeddedMessage(matrix=m, true_length=3)


class TestFeatureSpace:
    def test_name_decoding(self):
        fs = FeatureSpace([("bow", ["aa", "bb"]), ("pos", ["NN"]), ("w2v", 4)])
        assert fs.dim == 7
        assert fs.name(0) == "aa"
        assert fs.name(2) == "NN"
        assert fs.name(3) == "w2v[0]"

    def test_hash_changes_with_names(self):
        a = FeatureSpace([("bow", ["x"])])
        b = FeatureSpace([("bow", ["y"])])
        assert a.descriptor_hash() != b.descriptor_hash()
        assert a.descriptor_hash() == FeatureSpace.from_dict(a.to_dict()).descriptor_hash()


def test_feature_matrix_dump_roundtrip(tmp_path):
    rng = Random(1)
    vectors = []
    for _ in range(7):
        idx = sorted(rng.sample(range(20), rng.randint(0, 5)))
        vectors.append(SparseVector(idx, [rng.uniform(-2, 2) for _ in idx], dim=20))
    path = tmp_path / "features.txt"
    save_feature_matrix(path, vectors)
    loaded = load_feature_matrix(path)
    assert loaded == vectors
