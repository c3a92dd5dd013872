"""Partitioned SIF document embeddings.

Each word vector ``v_w`` is expanded into a word-topic vector: the
concatenation over topics ``j`` of ``weight[w, j] * v_w``. A document is the
SIF-weighted mean of its word-topic vectors, and the dominant singular
direction of the whole document matrix is projected out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus_io import (
    Corpus,
    FormatError,
    UnigramModel,
    WordVectorTable,
    _read_lines,
    atomic_write_text,
    estimate_unigram,
    format_float,
)
from .partition import (
    KSVD,
    DiagonalGMM,
    PartitionWeights,
)

logger = logging.getLogger(__name__)

DEFAULT_A = 1e-3


class MissingTokensError(KeyError):
    def __init__(self, tokens):
        self.tokens = list(tokens)
        shown = ", ".join(self.tokens[:10]) + (" ..." if len(self.tokens) > 10 else "")
        super().__init__(f"{len(self.tokens)} weighted token(s) missing from the vector table: {shown}")


@dataclass(frozen=True)
class WordTopicTable:
    """Word-topic vectors of length ``K * d``; row ``i`` belongs to ``tokens[i]``."""

    tokens: tuple[str, ...]
    vectors: np.ndarray
    K: int
    d: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def index(self) -> dict[str, int]:
        return self._index

    def __contains__(self, token):
        return token in self._index

    def __getitem__(self, token):
        return self.vectors[self._index[token]]


@dataclass(frozen=True)
class SifParams:
    a: float = DEFAULT_A
    remove_component: bool = True

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"weighting parameter a must be positive, got {self.a}")


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: tuple[str, ...]
    vectors: np.ndarray
    common_direction: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)


def build_word_topic_table(table: WordVectorTable, weights: PartitionWeights) -> WordTopicTable:
    missing = [t for t in weights.tokens if t not in table]
    if missing:
        raise MissingTokensError(missing)
    V = table.vectors[[table.index[t] for t in weights.tokens]].reshape(len(weights.tokens), table.dim)
    n, K = weights.weights.shape
    tv = (weights.weights[:, :, None] * V[:, None, :]).reshape(n, K * table.dim)
    return WordTopicTable(weights.tokens, tv, K, table.dim)


def sif_weight(p_w: float, a: float = DEFAULT_A) -> float:
    """Smooth inverse frequency weight ``a / (a + p(w))``."""
    return a / (a + p_w)


def _doc_terms(doc: Sequence[str], tt: WordTopicTable, unigram: UnigramModel, a: float):
    rows = [tt.index[w] for w in doc if w in tt.index]
    weights = np.array([sif_weight(unigram.prob(tt.tokens[r]), a) for r in rows])
    return rows, weights


def embed_document(
    doc: Sequence[str], tt: WordTopicTable, unigram: UnigramModel, params: SifParams = SifParams()
) -> np.ndarray:
    """Mean of SIF-weighted word-topic vectors over the in-vocabulary tokens.

    Out-of-vocabulary tokens are dropped and do not count towards the mean.
    Returns zeros when nothing is left.
    """
    rows, weights = _doc_terms(doc, tt, unigram, params.a)
    if not rows:
        return np.zeros(tt.K * tt.d)
    return (weights @ tt.vectors[rows]) / len(rows)


def dominant_direction(X: np.ndarray, max_iter: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Dominant right singular vector of ``X`` (rows are documents).

    Power iteration on ``X^T X`` applied implicitly. Iteration continues past
    the eigenvalue tolerance until the vector itself stops moving, so the
    result agrees with a dense SVD to near machine precision when the
    spectral gap allows it. The sign makes the first nonzero coordinate
    positive.
    """
    X = np.asarray(X, dtype=np.float64)
    X = X[np.any(X != 0, axis=1)]
    if X.size == 0:
        raise ValueError("no common component in zero matrix")
    # fixed pseudo-random start: generic, hence almost surely not orthogonal to u
    u = np.random.default_rng(0).standard_normal(X.shape[1])
    u /= np.linalg.norm(u)
    lam = 0.0
    for it in range(max_iter):
        w = X.T @ (X @ u)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            # start happened to be orthogonal to every row
            u = X[np.argmax(np.linalg.norm(X, axis=1))].copy()
            u /= np.linalg.norm(u)
            continue
        w /= lam_new
        step = min(np.linalg.norm(w - u), np.linalg.norm(w + u))
        u = w
        eig_done = abs(lam_new - lam) <= tol * lam_new
        lam = lam_new
        if eig_done and step <= 1e-14:
            break
    else:
        logger.warning("common direction: power iteration hit %d iterations", max_iter)
    scale = np.max(np.abs(u))
    nz = np.flatnonzero(np.abs(u) > 1e-12 * scale)
    if u[nz[0]] < 0:
        u = -u
    return u


def project_out(X: np.ndarray, u: np.ndarray) -> np.ndarray:
    return X - np.outer(X @ u, u)


def remove_common_component(emb: EmbeddingMatrix, u: np.ndarray | None = None) -> EmbeddingMatrix:
    """Project every row orthogonal to the dominant direction (or to a supplied ``u``)."""
    if u is None:
        u = dominant_direction(emb.vectors)
    else:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (emb.dim,):
            raise ValueError(f"common direction has length {u.shape[0]}, embeddings have {emb.dim}")
    return EmbeddingMatrix(emb.ids, project_out(emb.vectors, u), u)


def embed_corpus(
    corpus: Corpus | Iterable[Sequence[str]],
    tt: WordTopicTable,
    unigram: UnigramModel,
    params: SifParams = SifParams(),
    component: np.ndarray | None = None,
) -> EmbeddingMatrix:
    """Embed every document; remove the common component if ``params.remove_component``.

    ``component`` reuses a previously computed direction instead of fitting one.
    """
    if isinstance(corpus, Corpus):
        docs, ids = corpus.documents, tuple(corpus.doc_ids())
    else:
        docs = [tuple(doc) for doc in corpus]
        ids = tuple(str(i) for i in range(len(docs)))
    X = np.zeros((len(docs), tt.K * tt.d))
    n_empty = n_oov = 0
    for i, doc in enumerate(docs):
        X[i] = embed_document(doc, tt, unigram, params)
        in_vocab = sum(w in tt.index for w in doc)
        n_oov += len(doc) - in_vocab
        n_empty += in_vocab == 0
    if n_oov:
        logger.info("dropped %d out-of-vocabulary tokens", n_oov)
    if n_empty:
        logger.warning("%d document(s) have no in-vocabulary tokens; embedded as zeros", n_empty)
    emb = EmbeddingMatrix(ids, X)
    if params.remove_component:
        emb = remove_common_component(emb, component)
    return emb


def save_embedding_matrix(path, emb: EmbeddingMatrix) -> None:
    """``doc_id<TAB>v1<TAB>...`` per row; the common direction is saved separately."""
    body = "".join(
        "\t".join([doc_id, *(format_float(x) for x in row)]) + "\n"
        for doc_id, row in zip(emb.ids, emb.vectors)
    )
    atomic_write_text(path, body)


def load_embedding_matrix(path) -> EmbeddingMatrix:
    ids, rows = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split("\t")
        if rows and len(parts) - 1 != len(rows[0]):
            raise FormatError(f"ragged embedding row at line {lineno}")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return EmbeddingMatrix(tuple(ids), np.array(rows, dtype=np.float64).reshape(len(rows), -1))


class PSIFEmbedder(TransformerMixin, BaseEstimator):
    """Document embedder over tokenised documents.

    ``fit`` learns the word partition (unless ``partition_weights`` is
    supplied), the unigram model (unless ``unigram`` is supplied) and the
    common direction of the training documents. ``transform`` reuses all three.

    Parameters
    ----------
    word_vectors : WordVectorTable
    partitioner : {"ksvd", "gmm", "none"}
        ``"none"`` gives every word the single weight 1, i.e. plain SIF.
    n_topics : int
        ``K``; ignored for ``"none"``.
    sparsity : int or None
        Nonzeros per k-SVD code, default ``n_topics // 2``.
    a : float
        SIF weighting parameter.
    remove_component : bool
    max_iter : int
        k-SVD rounds or EM steps.
    random_state : int
    unigram : UnigramModel or None
    partition_weights : PartitionWeights or None
    """

    def __init__(
        self,
        word_vectors=None,
        partitioner="ksvd",
        n_topics=40,
        sparsity=None,
        a=DEFAULT_A,
        remove_component=True,
        max_iter=15,
        random_state=42,
        unigram=None,
        partition_weights=None,
    ):
        self.word_vectors = word_vectors
        self.partitioner = partitioner
        self.n_topics = n_topics
        self.sparsity = sparsity
        self.a = a
        self.remove_component = remove_component
        self.max_iter = max_iter
        self.random_state = random_state
        self.unigram = unigram
        self.partition_weights = partition_weights

    def _fit_partition(self, table: WordVectorTable) -> PartitionWeights:
        if self.partition_weights is not None:
            return self.partition_weights
        if self.partitioner == "none":
            return PartitionWeights.ones(table.tokens)
        if self.partitioner == "ksvd":
            model = KSVD(
                n_atoms=self.n_topics,
                sparsity=self.sparsity,
                max_iter=self.max_iter,
                random_state=self.random_state,
            ).fit(table.vectors)
            self.partition_model_ = model
            return PartitionWeights(table.tokens, model.codes_)
        if self.partitioner == "gmm":
            model = DiagonalGMM(
                n_components=self.n_topics, max_iter=self.max_iter, random_state=self.random_state
            )
            model.fit(table.vectors)
            self.partition_model_ = model
            return PartitionWeights(table.tokens, model.responsibilities_)
        raise ValueError(f"unknown partitioner {self.partitioner!r}")

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        if self.word_vectors is None:
            raise ValueError("word_vectors is required")
        docs = [tuple(doc) for doc in X]
        self.params_ = SifParams(self.a, self.remove_component)
        self.weights_ = self._fit_partition(self.word_vectors)
        self.word_topic_table_ = build_word_topic_table(self.word_vectors, self.weights_)
        self.unigram_ = self.unigram if self.unigram is not None else estimate_unigram(docs)
        emb = embed_corpus(docs, self.word_topic_table_, self.unigram_, self.params_)
        self.common_direction_ = emb.common_direction
        return emb.vectors

    def transform(self, X):
        check_is_fitted(self, "word_topic_table_")
        docs = [tuple(doc) for doc in X]
        emb = embed_corpus(
            docs, self.word_topic_table_, self.unigram_, self.params_, self.common_direction_
        )
        return emb.vectors
