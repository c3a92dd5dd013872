"""Linear classifiers over fixed document embeddings, plus cross-validation.

Multiclass problems use multinomial logistic regression, multilabel problems
one-vs-rest logistic regression. Both are trained by full-batch gradient
descent whose step is halved whenever it would increase the loss.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .metrics import micro_f1, multiclass_metrics

logger = logging.getLogger(__name__)


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _log_sigmoid(Z):
    return -np.logaddexp(0.0, -Z)


def logistic_loss_and_grad(W, b, X, Y, l2: float, multilabel: bool):
    """Mean cross-entropy plus ``0.5 * l2 * ||W||^2`` and its gradient.

    ``W`` is ``(d, L)``, ``b`` is ``(L,)``, ``Y`` is a one-hot (multiclass)
    or binary (multilabel) ``(n, L)`` matrix. The intercept is not penalised.
    Returns ``(loss, grad_W, grad_b)``.
    """
    n = X.shape[0]
    Z = X @ W + b
    if multilabel:
        nll = -(Y * _log_sigmoid(Z) + (1 - Y) * _log_sigmoid(-Z)).sum() / n
        P = np.exp(_log_sigmoid(Z))
    else:
        Zs = Z - Z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(Zs).sum(axis=1, keepdims=True))
        nll = -(Y * (Zs - log_norm)).sum() / n
        P = np.exp(Zs - log_norm)
    D = (P - Y) / n
    loss = nll + 0.5 * l2 * np.sum(W * W)
    return loss, X.T @ D + l2 * W, D.sum(axis=0)


class LogisticRegressionGD(ClassifierMixin, BaseEstimator):
    """Logistic regression trained by backtracking gradient descent.

    Parameters
    ----------
    l2 : float
        L2 penalty on the weights (not the intercept).
    epochs : int
        Maximum number of accepted gradient steps.
    multilabel : bool
        ``y`` is a binary indicator matrix and each label gets its own sigmoid.
    standardize : bool
        Centre and scale features with training statistics before fitting.
    tol : float
        Stop once an accepted step improves the loss by less than this.
    random_state : int
        Seed for the small random weight initialisation.
    """

    def __init__(self, l2=1e-4, epochs=500, multilabel=False, standardize=True, tol=1e-10, random_state=42):
        self.l2 = l2
        self.epochs = epochs
        self.multilabel = multilabel
        self.standardize = standardize
        self.tol = tol
        self.random_state = random_state

    def _prep(self, X):
        if self.standardize:
            return (X - self.mean_) / self.scale_
        return X

    def _targets(self, y):
        if self.multilabel:
            Y = check_array(y, dtype=np.float64)
            if not np.all((Y == 0) | (Y == 1)):
                raise ValueError("multilabel targets must be a binary indicator matrix")
            self.classes_ = np.arange(Y.shape[1])
            if Y.shape[1] < 1 or np.all(Y == Y[0]):
                raise ValueError("degenerate multilabel targets: every row is identical")
            return Y
        y = np.asarray(y)
        self.classes_, idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes to train a classifier")
        return np.eye(len(self.classes_))[idx]

    def fit(self, X, y):
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        X = check_array(X, dtype=np.float64)
        Y = self._targets(y)
        if Y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale_ = np.where(sd > 0, sd, 1.0)
        Xs = self._prep(X)
        n, d = Xs.shape
        L = Y.shape[1]
        rng = np.random.default_rng(self.random_state)
        W = 0.01 * rng.standard_normal((d, L))
        b = np.zeros(L)
        # 1 / Lipschitz bound of the gradient: ||[X 1]||_2^2 / n times 1/2 (softmax) or 1/4 (sigmoid)
        curv = 0.25 if self.multilabel else 0.5
        lip = curv * np.linalg.norm(np.hstack([Xs, np.ones((n, 1))]), 2) ** 2 / n + self.l2
        step = 1.0 / lip
        loss, gW, gb = logistic_loss_and_grad(W, b, Xs, Y, self.l2, self.multilabel)
        self.loss_history_ = [loss]
        for _ in range(self.epochs):
            for _ in range(60):
                W_new = W - step * gW
                b_new = b - step * gb
                new = logistic_loss_and_grad(W_new, b_new, Xs, Y, self.l2, self.multilabel)
                if new[0] <= loss:
                    break
                step *= 0.5
            else:
                break
            improvement = loss - new[0]
            W, b = W_new, b_new
            loss, gW, gb = new
            self.loss_history_.append(loss)
            if improvement < self.tol:
                break
        self.coef_ = W.T
        self.intercept_ = b
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = self._prep(check_array(X, dtype=np.float64))
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        Z = self.decision_function(X)
        if self.multilabel:
            return np.exp(_log_sigmoid(Z))
        return _softmax(Z)

    def predict(self, X):
        if self.multilabel:
            return (self.predict_proba(X) >= 0.5).astype(int)
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def train_linear_classifier(X, y, l2: float = 1e-4, epochs: int = 500, seed: int = 42, multilabel=None):
    """Fit a :class:`LogisticRegressionGD`; a 2-d ``y`` is treated as multilabel."""
    if multilabel is None:
        multilabel = np.ndim(y) == 2
    return LogisticRegressionGD(l2=l2, epochs=epochs, multilabel=multilabel, random_state=seed).fit(X, y)


def make_folds(n: int, folds: int, seed: int, y=None) -> list[np.ndarray]:
    """Split ``range(n)`` into ``folds`` disjoint index arrays.

    With multiclass ``y`` the split is stratified, unless some class has fewer
    than ``folds`` members, in which case it falls back to a plain shuffle.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"cannot make {folds} folds from {n} samples")
    rng = np.random.default_rng(seed)
    if y is not None:
        y = np.asarray(y)
        classes, counts = np.unique(y, return_counts=True)
        if counts.min() >= folds:
            buckets: list[list[int]] = [[] for _ in range(folds)]
            offset = 0
            for c in classes:
                members = rng.permutation(np.flatnonzero(y == c))
                for i, idx in enumerate(members):
                    buckets[(offset + i) % folds].append(int(idx))
                offset += len(members)
            return [np.sort(np.array(b, dtype=np.intp)) for b in buckets]
        warnings.warn(
            f"a class has fewer than {folds} examples; using unstratified folds", stacklevel=2
        )
    return [np.sort(part) for part in np.array_split(rng.permutation(n), folds)]


def _f1(model, X, y, multilabel):
    if multilabel:
        return micro_f1(model.predict(X), y)
    return multiclass_metrics(model.predict(X), y)["macro_f1"]


def run_cross_validation(X, y, folds: int = 5, grid=None, seed: int = 42, multilabel=None, epochs=500):
    """Pick the grid point with the best mean validation F1 (first one wins ties).

    ``grid`` is a list of keyword dicts for :class:`LogisticRegressionGD`.
    Multiclass uses macro F1, multilabel micro F1. Returns
    ``(best_params, report)`` where ``report`` lists every grid point's mean F1.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if multilabel is None:
        multilabel = y.ndim == 2
    grid = grid if grid is not None else [{"l2": 1e-4}]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    parts = make_folds(len(X), folds, seed, None if multilabel else y)
    scores = []
    for params in grid:
        fold_scores = []
        for val in parts:
            train = np.setdiff1d(np.arange(len(X)), val)
            model = LogisticRegressionGD(
                multilabel=multilabel, random_state=seed, **{"epochs": epochs, **params}
            )
            model.fit(X[train], y[train])
            fold_scores.append(_f1(model, X[val], y[val], multilabel))
        scores.append(float(np.mean(fold_scores)))
        logger.info("cv %s: mean F1 %.4f", params, scores[-1])
    best = int(np.argmax(scores))
    return grid[best], {"grid": list(grid), "mean_f1": scores, "best_index": best}
