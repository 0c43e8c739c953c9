"""Class-based TF-IDF topic signatures and diverse representative selection.

Each cluster ("class") gets a term-weight signature
w(term, class) = tf(term, class) * ln(1 + A / f(term)), where f is the
corpus-wide term frequency and A the average token count per class.
Top signature terms become topic keywords (optionally re-ranked against
representative-document embeddings), and representative documents are
picked per label stratum by greedy maximal-marginal-relevance selection.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document
from .embedding import EmbeddingMatrix
from .geometry import ClusterModel

log = logging.getLogger(__name__)

# Unicode word characters minus underscore, so keywords stay clean inside
# underscore-joined topic names.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class TokenizerConfig:
    min_len: int = 2
    stopwords: frozenset[str] = frozenset()


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    """Lowercased word tokens of at least min_len chars, stopwords removed."""
    tokens = _TOKEN_RE.findall(text.lower())
    return [t for t in tokens
            if len(t) >= config.min_len and t not in config.stopwords]


@dataclass
class ClassTermStats:
    """Per-class term counts plus the corpus-wide quantities the weights need."""

    vocabulary: list[str]
    tf: np.ndarray  # (k, |V|) counts
    f: np.ndarray  # (|V|,) corpus-wide term frequency
    avg_words_per_class: float
    term_index: dict[str, int] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.tf.shape[0])

    def __post_init__(self) -> None:
        if not self.term_index:
            self.term_index = {t: i for i, t in enumerate(self.vocabulary)}


def class_term_stats(corpus_docs: list[Document], model: ClusterModel,
                     tokenizer: TokenizerConfig = TokenizerConfig()) -> ClassTermStats:
    """Aggregate token counts per cluster over the given documents."""
    unassigned = [d.id for d in corpus_docs if d.id not in model.assignments]
    if unassigned:
        raise ValueError(f"documents without cluster assignment: {unassigned[:5]}")

    counts: list[dict[str, int]] = [dict() for _ in range(model.k)]
    for doc in corpus_docs:
        c = model.assignments[doc.id]
        bucket = counts[c]
        for tok in tokenize(doc.text, tokenizer):
            bucket[tok] = bucket.get(tok, 0) + 1

    vocabulary = sorted({t for bucket in counts for t in bucket})
    if not vocabulary:
        raise ValueError("empty vocabulary after token filtering")
    index = {t: i for i, t in enumerate(vocabulary)}
    tf = np.zeros((model.k, len(vocabulary)), dtype=np.float64)
    for c, bucket in enumerate(counts):
        for tok, n in bucket.items():
            tf[c, index[tok]] = n
    f = tf.sum(axis=0)
    avg = float(tf.sum() / model.k)
    return ClassTermStats(vocabulary=vocabulary, tf=tf, f=f,
                          avg_words_per_class=avg, term_index=index)


@dataclass
class TopicSignature:
    cluster: int
    weights: dict[str, float]
    raw_keywords: list[str] = field(default_factory=list)
    reranked_keywords: list[str] = field(default_factory=list)
    topic_name: str = ""


def ctfidf(stats: ClassTermStats) -> list[TopicSignature]:
    """Sparse per-class term weights: tf * ln(1 + A / f), natural log."""
    idf = np.log1p(stats.avg_words_per_class / stats.f)
    signatures = []
    for c in range(stats.k):
        row = stats.tf[c] * idf
        weights = {stats.vocabulary[i]: float(row[i])
                   for i in np.flatnonzero(stats.tf[c] > 0)}
        signatures.append(TopicSignature(cluster=c, weights=weights))
    return signatures


def idf_vector(stats: ClassTermStats) -> np.ndarray:
    return np.log1p(stats.avg_words_per_class / stats.f)


def signature_vector(sig: TopicSignature, stats: ClassTermStats) -> np.ndarray:
    """Dense weight vector of a class signature over the full vocabulary."""
    vec = np.zeros(len(stats.vocabulary))
    for term, w in sig.weights.items():
        vec[stats.term_index[term]] = w
    return vec


def doc_vector(text: str, stats: ClassTermStats,
               tokenizer: TokenizerConfig = TokenizerConfig()) -> np.ndarray:
    """A document's term counts reweighted by the per-term idf factor,
    placing it in the same space as the class signatures."""
    vec = np.zeros(len(stats.vocabulary))
    for tok in tokenize(text, tokenizer):
        i = stats.term_index.get(tok)
        if i is not None:
            vec[i] += 1.0
    return vec * idf_vector(stats)


def make_topic_name(cluster: int, keywords: list[str], top_n: int = 4) -> str:
    return f"{cluster}_" + "_".join(keywords[:top_n])


def topic_keywords(sig: TopicSignature, rep_doc_embeddings: EmbeddingMatrix,
                   embedder, top_n: int = 10) -> TopicSignature:
    """Fill in ranked keywords and the topic name.

    Raw keywords are the top weighted signature terms. They are then
    re-ranked by cosine similarity between each keyword's embedding and the
    mean of the representative-document embeddings, descending.
    """
    ranked = sorted(sig.weights.items(), key=lambda kv: (-kv[1], kv[0]))
    raw = [term for term, w in ranked[:top_n] if w > 0]
    if len(raw) < top_n:
        log.warning("cluster %d: only %d positive-weight terms for top_n=%d",
                    sig.cluster, len(raw), top_n)
    if not raw:
        sig.raw_keywords = []
        sig.reranked_keywords = []
        sig.topic_name = f"{sig.cluster}_"
        return sig

    centroid = rep_doc_embeddings.vectors.mean(axis=0)
    kw_matrix = embedder.embed(raw)
    scores = []
    for i, term in enumerate(raw):
        scores.append((_safe_cosine(kw_matrix.vectors[i], centroid), i, term))
    reranked = [term for _, _, term in
                sorted(scores, key=lambda s: (-s[0], s[1]))]
    sig.raw_keywords = raw
    sig.reranked_keywords = reranked
    sig.topic_name = make_topic_name(sig.cluster, reranked)
    return sig


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine that treats a zero vector as orthogonal to everything."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def mmr_select(ids: list[str], vectors: np.ndarray, query: np.ndarray,
               lam: float, n: int) -> list[str]:
    """Greedy maximal-marginal-relevance selection of n candidates.

    Each step picks the unselected candidate maximizing
    (1 - lam) * cos(candidate, query) - lam * max cos(candidate, selected).
    The first pick carries no redundancy penalty, so it is always the most
    query-relevant candidate; ties break by input order.
    """
    return [ids[i] for i, _ in mmr_select_scored(ids, vectors, query, lam, n)]


def mmr_select_scored(ids: list[str], vectors: np.ndarray, query: np.ndarray,
                      lam: float, n: int) -> list[tuple[int, float]]:
    """mmr_select returning (candidate index, objective at pick time) pairs."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    if n > len(ids):
        raise ValueError(f"cannot select {n} of {len(ids)} candidates")
    if len(ids) != len(vectors):
        raise ValueError("ids/vectors length mismatch")
    if n <= 0:
        return []

    relevance = [_safe_cosine(vectors[i], query) for i in range(len(ids))]
    selected: list[tuple[int, float]] = []
    remaining = list(range(len(ids)))

    first = max(remaining, key=lambda i: (relevance[i], -i))
    selected.append((first, relevance[first]))
    remaining.remove(first)

    while remaining and len(selected) < n:
        best_i, best_score = None, -math.inf
        for i in remaining:
            redundancy = max(_safe_cosine(vectors[i], vectors[j])
                             for j, _ in selected)
            score = (1.0 - lam) * relevance[i] - lam * redundancy
            if score > best_score:
                best_i, best_score = i, score
        assert best_i is not None
        selected.append((best_i, best_score))
        remaining.remove(best_i)
    return selected


def largest_remainder_quotas(shares: list[float], n: int) -> list[int]:
    """Integer quotas summing to n, each within one of n * share."""
    if n < 0:
        raise ValueError("n must be non-negative")
    total = sum(shares)
    if total <= 0:
        raise ValueError("shares must sum to a positive value")
    exact = [n * s / total for s in shares]
    quotas = [math.floor(e) for e in exact]
    shortfall = n - sum(quotas)
    remainders = sorted(range(len(shares)),
                        key=lambda i: (-(exact[i] - quotas[i]), i))
    for i in remainders[:shortfall]:
        quotas[i] += 1
    return quotas


@dataclass
class RepresentativeSet:
    cluster: int
    doc_ids: list[str]
    lam: float
    candidate_pool_size: int
    per_label_quota: dict[int, int]
    labels: dict[str, int] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)


def select_representatives(cluster_docs: list[Document], stats: ClassTermStats,
                           signature: TopicSignature, *, n: int = 10,
                           lam: float = 0.5, pool_size: int = 500, seed: int = 0,
                           space: str = "ctfidf",
                           embeddings: EmbeddingMatrix | None = None,
                           tokenizer: TokenizerConfig = TokenizerConfig(),
                           ) -> RepresentativeSet:
    """Pick up to n diverse documents from one cluster, stratified by label.

    A seeded uniform candidate pool of up to pool_size documents is drawn,
    per-label quotas follow the cluster's label proportions (largest
    remainder), and selection runs independently per stratum against the
    cluster's topic signature. In the default space candidates are compared
    as idf-reweighted term-count vectors; space="embedding" compares raw
    document embeddings against their cluster centroid instead.
    """
    if not cluster_docs:
        raise ValueError("cluster is empty")
    if space not in ("ctfidf", "embedding"):
        raise ValueError(f"unknown similarity space: {space}")
    if space == "embedding" and embeddings is None:
        raise ValueError("embedding space requires an embedding matrix")

    if len(cluster_docs) <= n:
        quota = _label_counts(cluster_docs)
        return RepresentativeSet(
            cluster=signature.cluster,
            doc_ids=[d.id for d in cluster_docs],
            lam=lam, candidate_pool_size=pool_size, per_label_quota=quota,
            labels={d.id: d.label for d in cluster_docs},
            scores={d.id: 0.0 for d in cluster_docs})

    label_counts = _label_counts(cluster_docs)
    labels_present = sorted(label_counts)
    quotas = largest_remainder_quotas(
        [label_counts[l] for l in labels_present], n)
    per_label_quota = dict(zip(labels_present, quotas))

    rng = random.Random(seed)
    pool = cluster_docs if len(cluster_docs) <= pool_size \
        else rng.sample(cluster_docs, pool_size)

    if space == "ctfidf":
        query = signature_vector(signature, stats)
        vec_of = lambda d: doc_vector(d.text, stats, tokenizer)
    else:
        assert embeddings is not None
        cluster_matrix = embeddings.take([d.id for d in cluster_docs])
        query = cluster_matrix.vectors.mean(axis=0)
        vec_of = lambda d: embeddings.row(d.id)

    chosen: list[str] = []
    labels_map: dict[str, int] = {}
    scores_map: dict[str, float] = {}
    for label in labels_present:
        quota = per_label_quota[label]
        if quota == 0:
            continue
        stratum = [d for d in pool if d.label == label]
        if len(stratum) < quota:
            # Pool underrepresents this label; top up from the full stratum.
            extra = [d for d in cluster_docs
                     if d.label == label and d not in stratum]
            rng.shuffle(extra)
            stratum = stratum + extra[:quota - len(stratum)]
        ids = [d.id for d in stratum]
        vectors = np.vstack([vec_of(d) for d in stratum])
        picks = mmr_select_scored(ids, vectors, query, lam, quota)
        for idx, score in picks:
            chosen.append(ids[idx])
            labels_map[ids[idx]] = label
            scores_map[ids[idx]] = score
    return RepresentativeSet(
        cluster=signature.cluster, doc_ids=chosen, lam=lam,
        candidate_pool_size=pool_size, per_label_quota=per_label_quota,
        labels=labels_map, scores=scores_map)


def _label_counts(docs: list[Document]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for d in docs:
        counts[d.label] = counts.get(d.label, 0) + 1
    return counts
