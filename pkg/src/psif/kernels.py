"""Document-similarity kernels over word vectors and topic vectors.

For documents A (n tokens) and B (m tokens), with word vectors ``v`` and
topic vectors ``t`` (a word's partition weights):

* ``K1_avg``:  mean over all token pairs of ``<v_i, v_j>``
* ``K2_twe``:  mean over all token pairs of ``<v_i, v_j> + <t_i, t_j>``
* ``K3_psif``: mean over all token pairs of ``<v_i, v_j> * <t_i, t_j>``
* ``K4_rwmd``: mean over tokens of A of ``max_j <v_i, v_j>`` (not symmetric)

K1 and K3 equal dot products of mean word vectors and mean word-topic
vectors respectively; K2 equals the dot product of means of ``t (+) v``.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .corpus_io import WordVectorTable
from .partition import PartitionWeights


class KernelKind(str, enum.Enum):
    K1_avg = "K1_avg"
    K2_twe = "K2_twe"
    K3_psif = "K3_psif"
    K4_rwmd = "K4_rwmd"

    @classmethod
    def parse(cls, value) -> "KernelKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name, kind.value.split("_")[0]):
                return kind
        raise ValueError(f"unknown kernel {value!r}; expected one of K1..K4")

    @property
    def needs_topics(self) -> bool:
        return self in (KernelKind.K2_twe, KernelKind.K3_psif)


class EmptyDocumentError(ValueError):
    pass


def _lookup(doc, table, weights, need_topics):
    if need_topics:
        windex = {t: i for i, t in enumerate(weights.tokens)}
        keep = [w for w in doc if w in table.index and w in windex]
        T = weights.weights[[windex[w] for w in keep]].reshape(len(keep), weights.K)
    else:
        keep = [w for w in doc if w in table.index]
        T = None
    if not keep:
        raise EmptyDocumentError("kernel undefined on empty document")
    V = table.vectors[[table.index[w] for w in keep]]
    return V, T


def _from_matrices(kind: KernelKind, Va, Ta, Vb, Tb) -> float:
    S = Va @ Vb.T
    if kind is KernelKind.K1_avg:
        return float(S.mean())
    if kind is KernelKind.K2_twe:
        return float((S + Ta @ Tb.T).mean())
    if kind is KernelKind.K3_psif:
        return float((S * (Ta @ Tb.T)).mean())
    return float(S.max(axis=1).mean())


def kernel(
    kind,
    doc_a: Sequence[str],
    doc_b: Sequence[str],
    table: WordVectorTable,
    weights: PartitionWeights | None = None,
) -> float:
    """Evaluate one kernel between two tokenised documents.

    Tokens missing from ``table`` (or from ``weights`` for K2/K3) are dropped;
    repeated tokens count once per occurrence.
    """
    kind = KernelKind.parse(kind)
    if kind.needs_topics and weights is None:
        raise ValueError(f"{kind.value} needs partition weights")
    Va, Ta = _lookup(doc_a, table, weights, kind.needs_topics)
    Vb, Tb = _lookup(doc_b, table, weights, kind.needs_topics)
    return _from_matrices(kind, Va, Ta, Vb, Tb)


def kernel_matrix(kind, corpus, table: WordVectorTable, weights: PartitionWeights | None = None):
    """All-pairs kernel values; entry ``[i, j]`` is ``kernel(doc_i, doc_j)``.

    K4 is left unsymmetrised: row ``i`` averages over the tokens of document ``i``.
    """
    kind = KernelKind.parse(kind)
    if kind.needs_topics and weights is None:
        raise ValueError(f"{kind.value} needs partition weights")
    mats = [_lookup(doc, table, weights, kind.needs_topics) for doc in corpus]
    N = len(mats)
    out = np.empty((N, N))
    symmetric = kind is not KernelKind.K4_rwmd
    for i in range(N):
        for j in range(i if symmetric else 0, N):
            out[i, j] = _from_matrices(kind, *mats[i], *mats[j])
            if symmetric:
                out[j, i] = out[i, j]
    return out
