"""Synthetic topic corpora with planted structure."""

import numpy as np

from psif.corpus_io import WordVectorTable


def topic_vectors(n_topics=5, words_per_topic=40, dim=4, spread=0.3, seed=0):
    """Disjoint per-topic vocabularies whose vectors cluster around a random topic centre."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_topics, dim))
    tokens, rows, topic_of = [], [], []
    for t in range(n_topics):
        for i in range(words_per_topic):
            tokens.append(f"t{t}w{i}")
            rows.append(centres[t] + spread * rng.standard_normal(dim))
            topic_of.append(t)
    return WordVectorTable(tuple(tokens), np.array(rows)), np.array(topic_of)


def topic_documents(n_docs, n_topics=5, words_per_topic=40, min_len=40, max_len=60, seed=0):
    """Documents drawing tokens from 2-3 random topics; returns docs and topic-mixture weights."""
    rng = np.random.default_rng(seed)
    docs, mixtures = [], []
    for _ in range(n_docs):
        n_t = int(rng.integers(2, 4))
        topics = rng.choice(n_topics, size=n_t, replace=False)
        theta = np.zeros(n_topics)
        theta[topics] = rng.dirichlet(np.ones(n_t))
        length = int(rng.integers(min_len, max_len + 1))
        draws = rng.choice(n_topics, size=length, p=theta)
        docs.append(tuple(f"t{t}w{rng.integers(words_per_topic)}" for t in draws))
        mixtures.append(theta)
    return docs, np.array(mixtures)


def sts_pairs(n_pairs=300, n_topics=5, words_per_topic=40, min_len=20, max_len=30, seed=0):
    """Sentence pairs whose gold score is the cosine of their topic mixtures.

    Half the pairs draw independent mixtures, half perturb the first
    sentence's mixture, so gold scores cover the whole range.
    """
    rng = np.random.default_rng(seed)
    pairs = []

    def sentence(theta):
        length = int(rng.integers(min_len, max_len + 1))
        draws = rng.choice(n_topics, size=length, p=theta)
        return tuple(f"t{t}w{rng.integers(words_per_topic)}" for t in draws)

    for i in range(n_pairs):
        ta = rng.dirichlet(0.3 * np.ones(n_topics))
        if i % 2:
            tb = rng.dirichlet(0.3 * np.ones(n_topics))
        else:
            tb = ta + 0.3 * rng.dirichlet(np.ones(n_topics))
            tb /= tb.sum()
        gold = float(ta @ tb / (np.linalg.norm(ta) * np.linalg.norm(tb)))
        pairs.append((sentence(ta), sentence(tb), gold))
    return pairs
