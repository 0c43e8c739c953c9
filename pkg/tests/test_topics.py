"""Topic signature, keyword, and representative-selection tests.

The weight formula and the greedy selection are both checked against
independent brute-force oracles implemented here with plain Python math.
"""

import math
import re
from datetime import date

import numpy as np
import pytest

from mftsuite.corpus import Document
from mftsuite.embedding import EmbeddingMatrix
from mftsuite.geometry import ClusterModel
from mftsuite.topics import (
    ClassTermStats, TokenizerConfig, class_term_stats, ctfidf, doc_vector,
    largest_remainder_quotas, make_topic_name, mmr_select, mmr_select_scored,
    select_representatives, signature_vector, tokenize, topic_keywords,
)

TOPIC_NAME_RE = re.compile(r"^[0-9]+(_[^_]+){1,4}$")


def docs_for(cluster_texts: dict[int, list[str]], labels=None):
    """Build documents plus a cluster model from {cluster: texts}."""
    docs, assignments = [], {}
    i = 0
    for cluster, texts in cluster_texts.items():
        for text in texts:
            label = labels[i] if labels else i % 2
            doc_id = f"d{i}"
            docs.append(Document(id=doc_id, text=text, label=label,
                                 category="", date=date(2012, 1, 1)))
            assignments[doc_id] = cluster
            i += 1
    k = max(cluster_texts) + 1
    model = ClusterModel(k=k, centroids=np.zeros((k, 2)),
                         assignments=assignments, inertia=0.0, seed=0,
                         iterations_run=1)
    return docs, model


def brute_force_weight(term, cluster, docs, model, min_len=2, stopwords=()):
    """Independent scalar recomputation of one (term, class) weight."""
    def toks(text):
        return [t for t in re.findall(r"[^\W_]+", text.lower())
                if len(t) >= min_len and t not in stopwords]

    k = model.k
    tf = 0
    f = 0
    total = 0
    for doc in docs:
        tokens = toks(doc.text)
        total += len(tokens)
        hits = sum(1 for t in tokens if t == term)
        f += hits
        if model.assignments[doc.id] == cluster:
            tf += hits
    avg = total / k
    if tf == 0:
        return 0.0
    return tf * math.log(1.0 + avg / f)


def mmr_oracle(vectors, query, lam, n):
    """Stepwise argmax replay with its own cosine (pure Python)."""
    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return 0.0 if na == 0 or nb == 0 else dot / (na * nb)

    rel = [cos(v, query) for v in vectors]
    remaining = list(range(len(vectors)))
    picked = []
    best = max(remaining, key=lambda i: (rel[i], -i))
    picked.append(best)
    remaining.remove(best)
    while remaining and len(picked) < n:
        best, best_score = None, -math.inf
        for i in remaining:
            redundancy = max(cos(vectors[i], vectors[j]) for j in picked)
            score = (1 - lam) * rel[i] - lam * redundancy
            if score > best_score:
                best, best_score = i, score
        picked.append(best)
        remaining.remove(best)
    return picked


class TestTokenizer:
    def test_lowercase_min_length(self):
        assert tokenize("A Good Toy!") == ["good", "toy"]

    def test_stopwords_filtered(self):
        cfg = TokenizerConfig(stopwords=frozenset({"the"}))
        assert tokenize("The good the bad", cfg) == ["good", "bad"]

    def test_no_underscore_tokens(self):
        assert "foo_bar" not in tokenize("foo_bar baz")


class TestClassTermStats:
    def test_hand_counts(self):
        docs, model = docs_for({0: ["good toy good"], 1: ["bad toy"]})
        stats = class_term_stats(docs, model)
        gi = stats.term_index["good"]
        ti = stats.term_index["toy"]
        assert stats.tf[0, gi] == 2
        assert stats.f[gi] == 2
        assert stats.f[ti] == 2
        assert stats.avg_words_per_class == pytest.approx(2.5)

    def test_empty_class_row_is_zero(self):
        docs, model = docs_for({0: ["good toy"], 1: ["!!! ??"]})
        stats = class_term_stats(docs, model)
        assert np.all(stats.tf[1] == 0)

    def test_stopword_absent_from_vocabulary(self):
        docs, model = docs_for({0: ["the good toy"]})
        stats = class_term_stats(docs, model,
                                 TokenizerConfig(stopwords=frozenset({"the"})))
        assert "the" not in stats.vocabulary

    def test_empty_vocabulary_errors(self):
        docs, model = docs_for({0: ["!!!"], 1: ["??"]})
        with pytest.raises(ValueError, match="vocabulary"):
            class_term_stats(docs, model)

    def test_unassigned_document_errors(self):
        docs, model = docs_for({0: ["good toy"]})
        docs.append(Document(id="stray", text="x y", label=0, category="",
                             date=date(2012, 1, 1)))
        with pytest.raises(ValueError, match="assignment"):
            class_term_stats(docs, model)


class TestCtfidf:
    def test_zero_frequency_zero_weight(self):
        docs, model = docs_for({0: ["good toy good"], 1: ["bad toy"]})
        sigs = ctfidf(class_term_stats(docs, model))
        assert "bad" not in sigs[0].weights
        assert all(w > 0 for w in sigs[0].weights.values())

    def test_scalar_values(self):
        docs, model = docs_for({0: ["good toy good"], 1: ["bad toy"]})
        sigs = ctfidf(class_term_stats(docs, model))
        assert sigs[0].weights["toy"] == pytest.approx(0.81093, abs=1e-5)
        assert sigs[0].weights["good"] == pytest.approx(1.62186, abs=1e-5)

    def test_matches_brute_force_everywhere(self):
        docs, model = docs_for({
            0: ["good toy good fun", "fun game good"],
            1: ["bad toy broken", "awful broken game bad bad"],
            2: ["music album music lovely"],
        })
        stats = class_term_stats(docs, model)
        sigs = ctfidf(stats)
        for c in range(model.k):
            for term in stats.vocabulary:
                expected = brute_force_weight(term, c, docs, model)
                got = sigs[c].weights.get(term, 0.0)
                assert got == pytest.approx(expected, abs=1e-9)

    def test_equal_f_weight_order_follows_tf(self):
        docs, model = docs_for({0: ["aa aa bb cc"], 1: ["bb cc cc"]})
        stats = class_term_stats(docs, model)
        sigs = ctfidf(stats)
        # aa and cc both have corpus frequency 2 wait: aa=2, bb=2, cc=3.
        fa = stats.f[stats.term_index["aa"]]
        fb = stats.f[stats.term_index["bb"]]
        assert fa == fb
        # tf(aa, class0)=2 > tf(bb, class0)=1, same f -> weight order follows.
        assert sigs[0].weights["aa"] > sigs[0].weights["bb"]


class StubEmbedder:
    """Keyword embedder returning preset vectors."""

    def __init__(self, table, dim):
        self.table = table
        self.dim = dim

    def embed(self, texts, ids=None):
        rows = [self.table[t] for t in texts]
        return EmbeddingMatrix(ids=[str(i) for i in range(len(texts))],
                               vectors=np.asarray(rows, dtype=np.float64))


class TestTopicKeywords:
    def _sig_and_stats(self):
        docs, model = docs_for(
            {0: ["author reviews better readers author reviews"],
             1: ["song lyrics melody"]})
        stats = class_term_stats(docs, model)
        return ctfidf(stats)[0], stats

    def test_rerank_by_rep_doc_similarity(self):
        sig, _ = self._sig_and_stats()
        mean_dir = np.array([1.0, 0.0, 0.0])
        rep = EmbeddingMatrix(ids=["r1", "r2"],
                              vectors=np.vstack([mean_dir, mean_dir]))
        table = {"author": [1.0, 0.0, 0.0],      # equals the mean: rank first
                 "reviews": [0.0, 1.0, 0.0],
                 "better": [0.5, 0.5, 0.0],
                 "readers": [-1.0, 0.0, 0.0]}
        out = topic_keywords(sig, rep, StubEmbedder(table, 3), top_n=4)
        assert out.reranked_keywords[0] == "author"
        assert out.reranked_keywords[-1] == "readers"
        assert out.topic_name.startswith("0_author")

    def test_name_format(self):
        sig, _ = self._sig_and_stats()
        rep = EmbeddingMatrix(ids=["r"], vectors=np.array([[1.0, 0.0]]))
        table = {t: [1.0, 0.0] for t in sig.weights}
        out = topic_keywords(sig, rep, StubEmbedder(table, 2), top_n=4)
        assert TOPIC_NAME_RE.match(out.topic_name), out.topic_name

    def test_shortage_returns_what_exists(self, caplog):
        docs, model = docs_for({0: ["alpha beta"], 1: ["gamma"]})
        stats = class_term_stats(docs, model)
        sig = ctfidf(stats)[0]
        rep = EmbeddingMatrix(ids=["r"], vectors=np.array([[1.0]]))
        table = {"alpha": [1.0], "beta": [0.5]}
        with caplog.at_level("WARNING"):
            out = topic_keywords(sig, rep, StubEmbedder(table, 1), top_n=10)
        assert len(out.reranked_keywords) == 2
        assert any("positive-weight" in r.message for r in caplog.records)


class TestMmr:
    def test_singleton(self):
        for lam in (0.0, 0.5, 1.0):
            picked = mmr_select(["only"], np.array([[1.0, 0.0]]),
                                np.array([0.0, 1.0]), lam, 1)
            assert picked == ["only"]

    def test_lambda_zero_is_pure_relevance(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            m = int(rng.integers(2, 9))
            vectors = rng.standard_normal((m, 4))
            query = rng.standard_normal(4)
            ids = [f"c{i}" for i in range(m)]
            got = mmr_select(ids, vectors, query, 0.0, m)
            rel = [float(np.dot(v, query) /
                         (np.linalg.norm(v) * np.linalg.norm(query)))
                   for v in vectors]
            expected = [ids[i] for i in
                        sorted(range(m), key=lambda i: (-rel[i], i))]
            assert got == expected

    def test_matches_replay_oracle(self):
        rng = np.random.default_rng(37)
        for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
            for _ in range(20):
                m = int(rng.integers(2, 9))
                n = int(rng.integers(1, m + 1))
                vectors = rng.standard_normal((m, 5))
                query = rng.standard_normal(5)
                ids = [f"c{i}" for i in range(m)]
                got = mmr_select(ids, vectors, query, lam, n)
                expected = [ids[i] for i in
                            mmr_oracle(vectors.tolist(), query.tolist(), lam, n)]
                assert got == expected, f"lam={lam}"

    def test_tie_broken_by_input_order(self):
        vectors = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        got = mmr_select(["a", "b", "c"], vectors, np.array([1.0, 0.0]), 0.0, 3)
        assert got == ["a", "b", "c"]

    def test_output_subset_no_duplicates(self):
        rng = np.random.default_rng(41)
        for _ in range(30):
            m = int(rng.integers(1, 10))
            n = int(rng.integers(1, m + 1))
            vectors = rng.standard_normal((m, 3))
            ids = [f"c{i}" for i in range(m)]
            got = mmr_select(ids, vectors, rng.standard_normal(3), 0.5, n)
            assert len(got) == n == len(set(got))
            assert set(got) <= set(ids)

    def test_errors(self):
        vectors = np.ones((2, 2))
        with pytest.raises(ValueError):
            mmr_select(["a", "b"], vectors, np.ones(2), 0.5, 3)
        with pytest.raises(ValueError):
            mmr_select(["a", "b"], vectors, np.ones(2), 1.5, 1)


class TestQuotas:
    def test_forty_sixty_split(self):
        assert largest_remainder_quotas([0.4, 0.6], 10) == [4, 6]

    def test_sum_and_within_one(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            parts = int(rng.integers(2, 6))
            shares = rng.uniform(0.05, 1.0, parts)
            shares = (shares / shares.sum()).tolist()
            n = int(rng.integers(1, 50))
            quotas = largest_remainder_quotas(shares, n)
            assert sum(quotas) == n
            for q, s in zip(quotas, shares):
                assert abs(q - n * s) < 1.0 + 1e-9

    def test_degenerate_shares(self):
        with pytest.raises(ValueError):
            largest_remainder_quotas([0.0, 0.0], 5)


NEAR_DUP_TEXTS = [
    "Five stars",
    "five stars!!!",
    "Five stars! Five stars!",
    "Shipping arrived quickly and packaging was immaculate",
    "The drummer keeps sloppy rhythm throughout every track",
    "Lyrics feel heartfelt with gorgeous melodies and soulful vocals",
    "Recording quality sounds muffled like a cheap basement demo",
    "Vinyl pressing warped slightly but plays without skipping",
    "Concert energy translates surprisingly well onto this live disc",
    "Booklet artwork alone justifies owning a physical copy",
]
NEAR_DUP_IDS = {"d0", "d1", "d2"}


def near_dup_fixture():
    docs, model = docs_for({0: NEAR_DUP_TEXTS},
                           labels=[1, 1, 1, 1, 0, 1, 0, 0, 1, 1])
    stats = class_term_stats(docs, model)
    sig = ctfidf(stats)[0]
    query = signature_vector(sig, stats)
    vectors = np.vstack([doc_vector(d.text, stats) for d in docs])
    return docs, stats, sig, query, vectors


class TestSelectRepresentatives:
    def _cluster(self, n_pos, n_neg):
        texts_pos = [f"great unique{i} praise{i} phrase{i}" for i in range(n_pos)]
        texts_neg = [f"awful unique{i + n_pos} gripe{i} mess{i}"
                     for i in range(n_neg)]
        docs, model = docs_for({0: texts_pos + texts_neg},
                               labels=[1] * n_pos + [0] * n_neg)
        stats = class_term_stats(docs, model)
        sig = ctfidf(stats)[0]
        return docs, stats, sig

    def test_forty_sixty_cluster_yields_4_plus_6(self):
        docs, stats, sig = self._cluster(20, 30)
        rep = select_representatives(docs, stats, sig, n=10, lam=0.5,
                                     pool_size=500, seed=1)
        assert rep.per_label_quota == {0: 6, 1: 4}
        labels = [rep.labels[i] for i in rep.doc_ids]
        assert labels.count(1) == 4 and labels.count(0) == 6
        assert len(rep.doc_ids) == len(set(rep.doc_ids)) == 10

    def test_undersized_cluster_returns_all(self):
        docs, stats, sig = self._cluster(2, 1)
        rep = select_representatives(docs, stats, sig, n=10, seed=0)
        assert sorted(rep.doc_ids) == sorted(d.id for d in docs)

    def test_selection_deterministic_per_seed(self):
        docs, stats, sig = self._cluster(15, 15)
        a = select_representatives(docs, stats, sig, n=6, seed=5, pool_size=10)
        b = select_representatives(docs, stats, sig, n=6, seed=5, pool_size=10)
        assert a.doc_ids == b.doc_ids

    def test_near_duplicates_suppressed_at_half_lambda(self):
        docs, stats, sig, query, vectors = near_dup_fixture()
        ids = [d.id for d in docs]
        picked_relevance = mmr_select(ids, vectors, query, 0.0, 5)
        picked_diverse = mmr_select(ids, vectors, query, 0.5, 5)
        assert len(NEAR_DUP_IDS & set(picked_relevance)) >= 2
        assert len(NEAR_DUP_IDS & set(picked_diverse)) <= 1
        # Both runs agree with the independent replay oracle.
        for lam, picked in ((0.0, picked_relevance), (0.5, picked_diverse)):
            oracle = [ids[i] for i in
                      mmr_oracle(vectors.tolist(), query.tolist(), lam, 5)]
            assert picked == oracle

    def test_diversity_raises_min_pairwise_distance(self):
        docs, stats, sig, query, vectors = near_dup_fixture()
        ids = [d.id for d in docs]
        index = {i: k for k, i in enumerate(ids)}

        def min_pair_cos_distance(selected):
            worst = math.inf
            for a in selected:
                for b in selected:
                    if a >= b:
                        continue
                    va, vb = vectors[index[a]], vectors[index[b]]
                    cos = float(np.dot(va, vb) /
                                (np.linalg.norm(va) * np.linalg.norm(vb)))
                    worst = min(worst, 1.0 - cos)
            return worst

        relevance_only = mmr_select(ids, vectors, query, 0.0, 5)
        diverse = mmr_select(ids, vectors, query, 0.5, 5)
        assert min_pair_cos_distance(diverse) >= min_pair_cos_distance(relevance_only)

    def test_embedding_space_mode(self):
        docs, stats, sig = self._cluster(8, 8)
        rng = np.random.default_rng(47)
        emb = EmbeddingMatrix(ids=[d.id for d in docs],
                              vectors=rng.standard_normal((len(docs), 6)))
        rep = select_representatives(docs, stats, sig, n=4, seed=0,
                                     space="embedding", embeddings=emb)
        assert len(rep.doc_ids) == 4

    def test_empty_cluster_errors(self):
        docs, stats, sig = self._cluster(3, 3)
        with pytest.raises(ValueError):
            select_representatives([], stats, sig, n=2, seed=0)
