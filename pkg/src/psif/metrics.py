"""Evaluation metrics: Pearson correlation, multiclass and multilabel scores."""

from __future__ import annotations

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def pearson(x, y) -> float:
    """Sample Pearson correlation of two equal-length sequences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise UndefinedMetricError("undefined correlation: need at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedMetricError("undefined correlation: constant input")
    dx = x - x.mean()
    dy = y - y.mean()
    r = (dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy))
    return float(np.clip(r, -1.0, 1.0))


def multiclass_metrics(pred, gold) -> dict[str, float]:
    """Accuracy and macro-averaged precision, recall and F1.

    Classes are the union of predicted and gold labels; a 0/0 ratio counts as 0.
    Macro F1 is the mean of per-class F1 scores.
    """
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape or pred.ndim != 1 or len(pred) == 0:
        raise ValueError("pred and gold must be nonempty 1-d sequences of equal length")
    classes = np.union1d(pred, gold)
    precision, recall, f1 = [], [], []
    for c in classes:
        tp = np.sum((pred == c) & (gold == c))
        n_pred = np.sum(pred == c)
        n_gold = np.sum(gold == c)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return {
        "accuracy": float(np.mean(pred == gold)),
        "macro_precision": float(np.mean(precision)),
        "macro_recall": float(np.mean(recall)),
        "macro_f1": float(np.mean(f1)),
    }


def label_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based rank of every label per row; ties go to the lower label index."""
    n, L = scores.shape
    order = np.lexsort((np.broadcast_to(np.arange(L), (n, L)), -scores), axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, L + 1)[None, :].repeat(n, axis=0), axis=1)
    return ranks


def micro_f1(pred: np.ndarray, gold: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gold = np.asarray(gold, dtype=bool)
    tp = np.sum(pred & gold)
    fp = np.sum(pred & ~gold)
    fn = np.sum(~pred & gold)
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def multilabel_metrics(scores, gold, k: int, threshold: float = 0.5) -> dict[str, float]:
    """Ranking metrics over an ``(N, L)`` score matrix and binary ``gold``.

    Rows with no positive label are skipped for precision@k, nDCG@k and LRAP
    and contribute 0 to coverage error; their count is reported as
    ``rows_without_positives``. micro-F1 predicts every label with
    ``score >= threshold``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold).astype(bool)
    if scores.shape != gold.shape or scores.ndim != 2:
        raise ValueError("scores and gold must be matrices of the same shape")
    N, L = scores.shape
    if not 1 <= k <= L:
        raise ValueError(f"k={k} must be in [1, {L}]")
    ranks = label_ranks(scores)
    n_pos = gold.sum(axis=1)
    has_pos = n_pos > 0

    in_top = gold & (ranks <= k)
    discount = 1.0 / np.log2(ranks + 1.0)
    dcg = np.where(in_top, discount, 0.0).sum(axis=1)
    ideal_disc = 1.0 / np.log2(np.arange(2, k + 2))
    idcg = np.array([ideal_disc[: min(k, p)].sum() for p in n_pos])

    coverage = np.where(gold, ranks, 0).max(axis=1)

    lrap = np.zeros(N)
    for i in np.flatnonzero(has_pos):
        r = np.sort(ranks[i, gold[i]])
        lrap[i] = np.mean(np.arange(1, len(r) + 1) / r)

    def row_mean(v):
        return float(v[has_pos].mean()) if has_pos.any() else 0.0

    return {
        f"precision@{k}": row_mean(in_top.sum(axis=1) / k),
        f"ndcg@{k}": row_mean(np.divide(dcg, idcg, out=np.zeros(N), where=idcg > 0)),
        "coverage_error": float(coverage.mean()) if N else 0.0,
        "lrap": row_mean(lrap),
        "micro_f1": micro_f1(scores >= threshold, gold),
        "rows_without_positives": int(N - has_pos.sum()),
    }
