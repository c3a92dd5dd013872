"""Per-word topic weights over a word-vector vocabulary.

Two partitioners are provided:

* :class:`KSVD` learns ``K`` unit-norm atoms and codes every word vector as a
  sparse combination of at most ``k`` of them (orthogonal matching pursuit for
  coding, rank-1 atom updates).
* :class:`DiagonalGMM` soft-clusters the word vectors; posteriors ``P(c|w)``
  play the role of the sparse coefficients.

Both are scikit-learn style estimators over an ``(n_words, d)`` matrix. The
``ksvd_fit`` / ``gmm_fit`` helpers wrap them for a :class:`WordVectorTable`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus_io import (
    FormatError,
    WordVectorTable,
    _read_lines,
    atomic_write_text,
    format_float,
    load_matrix,
    save_matrix,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_RESIDUAL_TOL = 1e-12


class VocabularyTooSmall(ValueError):
    pass


def omp_sparse_code(v, atoms, k: int) -> np.ndarray:
    """Orthogonal matching pursuit of ``v`` over the rows of ``atoms``.

    Picks ``k`` atoms greedily by ``|<residual, A_j>|`` (lowest index on ties),
    re-fitting all selected coefficients by least squares after each pick.
    Stops early once the residual norm drops below 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("v must be a vector")
    return omp_batch(v[None, :], atoms, k)[0]


def omp_batch(X, atoms, k: int) -> np.ndarray:
    """Row-wise :func:`omp_sparse_code` for a ``(n, d)`` matrix, vectorised over rows."""
    X = np.asarray(X, dtype=np.float64)
    atoms = np.asarray(atoms, dtype=np.float64)
    n_atoms = atoms.shape[0]
    if not 1 <= k <= n_atoms:
        raise ValueError(f"sparsity k={k} must be in [1, {n_atoms}]")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(atoms))):
        raise ValueError("omp input must be finite")
    n = X.shape[0]
    codes = np.zeros((n, n_atoms))
    if n == 0:
        return codes
    gram = atoms @ atoms.T
    proj = X @ atoms.T
    residual = X.copy()
    support = np.zeros((n, 0), dtype=np.intp)
    active = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for s in range(k):
        active &= np.linalg.norm(residual, axis=1) >= _RESIDUAL_TOL
        if not active.any():
            break
        idx = rows[active]
        score = np.abs(residual[idx] @ atoms.T)
        score[np.arange(len(idx))[:, None], support[idx]] = -np.inf
        pick = np.argmax(score, axis=1)
        new_support = np.zeros((n, s + 1), dtype=np.intp)
        new_support[:, :s] = support
        new_support[idx, s] = pick
        # inactive rows keep a placeholder column that is never read
        new_support[~active, s] = -1
        support = new_support
        S = support[idx]
        G = gram[S[:, :, None], S[:, None, :]]
        b = np.take_along_axis(proj[idx], S, axis=1)
        sol = _solve_normal(G, b, atoms, S, X[idx])
        codes[idx] = 0.0
        codes[idx[:, None], S] = sol
        residual[idx] = X[idx] - codes[idx] @ atoms
    return codes


def _solve_normal(G, b, atoms, S, X):
    try:
        sol = np.linalg.solve(G, b[..., None])[..., 0]
        ok = np.all(np.isfinite(sol), axis=1)
    except np.linalg.LinAlgError:
        sol = np.zeros_like(b)
        ok = np.zeros(len(b), dtype=bool)
    cond_bad = np.linalg.cond(G) > 1e10
    for i in np.flatnonzero(~ok | cond_bad):
        sol[i] = np.linalg.lstsq(atoms[S[i]].T, X[i], rcond=None)[0]
    return sol


def _dominant_pair(E: np.ndarray, start: np.ndarray, max_iter: int = 100, tol: float = 1e-10):
    """Rank-1 approximation ``E ~ a g^T`` by power iteration on ``E E^T``.

    ``a`` is unit norm. Starting from ``start`` keeps ``||E^T a||`` from
    decreasing relative to the starting atom.
    """
    a = start / np.linalg.norm(start)
    g = E.T @ a
    sigma2 = g @ g
    if sigma2 == 0.0:
        col = int(np.argmax(np.einsum("ij,ij->j", E, E)))
        a = E[:, col] / np.linalg.norm(E[:, col])
        g = E.T @ a
        sigma2 = g @ g
    for _ in range(max_iter):
        w = E @ g
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        a_new = w / nw
        g_new = E.T @ a_new
        s_new = g_new @ g_new
        if s_new < sigma2:
            break
        done = s_new - sigma2 <= tol * s_new
        a, g, sigma2 = a_new, g_new, s_new
        if done:
            break
    return a, g


def _squared_errors(X, codes, atoms):
    R = X - codes @ atoms
    return np.einsum("ij,ij->i", R, R)


class KSVD(TransformerMixin, BaseEstimator):
    """k-SVD dictionary learning with OMP coding.

    Parameters
    ----------
    n_atoms : int
        Number of dictionary atoms ``K``.
    sparsity : int or None
        Maximum nonzeros per code ``k``; ``None`` means ``n_atoms // 2``.
    max_iter : int
        Number of coding/update rounds.
    n_init : int
        Number of seeded initialisations; the run with the lowest final
        reconstruction error is kept.
    random_state : int
        Seed for choosing the initial atoms.
    keep_snapshots : bool
        Store ``(atoms, codes)`` after every round in ``snapshots_``.

    Attributes
    ----------
    atoms_ : ndarray (K, d)
    codes_ : ndarray (n_samples, K)
    residual_norms_ : ndarray (n_samples,)
    mse_history_ : list of float, mean squared reconstruction error per round
        of the kept run
    """

    def __init__(
        self, n_atoms=40, sparsity=None, max_iter=15, n_init=3, random_state=42, keep_snapshots=False
    ):
        self.n_atoms = n_atoms
        self.sparsity = sparsity
        self.max_iter = max_iter
        self.n_init = n_init
        self.random_state = random_state
        self.keep_snapshots = keep_snapshots

    def _sparsity(self):
        k = self.sparsity if self.sparsity is not None else max(1, self.n_atoms // 2)
        if not 1 <= k <= self.n_atoms:
            raise ValueError(f"sparsity k={k} must be in [1, {self.n_atoms}]")
        return k

    def _init_atoms(self, X, rng):
        """Sample ``K`` distinct rows of ``X``, favouring directions the earlier picks miss.

        Each pick is drawn with probability proportional to the row's energy
        outside the span of the rows already chosen (falling back to
        ``1 - max cos^2`` once that span is the whole space).
        """
        n, d = X.shape
        norms = np.linalg.norm(X, axis=1)
        nonzero = norms > 0
        if nonzero.sum() < self.n_atoms:
            raise VocabularyTooSmall(
                f"K exceeds the number of nonzero word vectors ({int(nonzero.sum())})"
            )
        U = np.zeros_like(X)
        U[nonzero] = X[nonzero] / norms[nonzero, None]
        chosen = [int(rng.choice(np.flatnonzero(nonzero)))]
        total = float(norms @ norms)
        P = X.copy()
        while True:
            # deflate P by the newest pick, orthogonalised against earlier ones
            q = P[chosen[-1]]
            qn = np.linalg.norm(q)
            if qn > 1e-12 * norms[chosen[-1]]:
                q = q / qn
                P -= np.outer(P @ q, q)
            if len(chosen) == self.n_atoms:
                break
            w = np.einsum("ij,ij->i", P, P)
            w[chosen] = 0.0
            if w.sum() <= 1e-12 * total:
                w = (1.0 - np.max((U @ U[chosen].T) ** 2, axis=1)) * norms**2
                w = np.clip(w, 0.0, None)
                w[chosen] = 0.0
            if w.sum() <= 0.0:
                w = nonzero.astype(float)
                w[chosen] = 0.0
            chosen.append(int(rng.choice(n, p=w / w.sum())))
        return U[chosen].copy()

    def _code_all(self, X, atoms, k):
        return omp_batch(X, atoms, k)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        K = self.n_atoms
        if K < 1:
            raise ValueError("n_atoms must be positive")
        if K > n:
            raise VocabularyTooSmall(f"K exceeds vocabulary: K={K}, vocabulary size={n}")
        if self.n_init < 1:
            raise ValueError("n_init must be positive")
        k = self._sparsity()
        seeds = np.random.default_rng(self.random_state).integers(2**32, size=self.n_init)
        best = None
        for seed in seeds:
            run = self._fit_once(X, k, np.random.default_rng(seed))
            if best is None or run[2][-1] < best[2][-1]:
                best = run
        atoms, codes, self.mse_history_, self.snapshots_ = best
        self.atoms_ = atoms
        self.codes_ = codes
        self.residual_norms_ = np.sqrt(_squared_errors(X, codes, atoms))
        self.n_features_in_ = d
        return self

    def _fit_once(self, X, k, rng):
        atoms = self._init_atoms(X, rng)
        codes = self._code_all(X, atoms, k)
        history = [float(np.mean(_squared_errors(X, codes, atoms)))] if self.max_iter == 0 else []
        snapshots = []
        for it in range(self.max_iter):
            if it > 0:
                new_codes = self._code_all(X, atoms, k)
                # OMP is greedy: never accept a code worse than the current one
                worse = _squared_errors(X, new_codes, atoms) > _squared_errors(X, codes, atoms)
                new_codes[worse] = codes[worse]
                codes = new_codes
            self._update_atoms(X, atoms, codes)
            mse = float(np.mean(_squared_errors(X, codes, atoms)))
            history.append(mse)
            logger.debug("ksvd iter %d mse %.6g", it, mse)
            if self.keep_snapshots:
                snapshots.append((atoms.copy(), codes.copy()))
        return atoms, codes, history, snapshots

    def _update_atoms(self, X, atoms, codes):
        used_for_restart: set[int] = set()
        for j in range(atoms.shape[0]):
            users = np.flatnonzero(codes[:, j])
            if users.size == 0:
                self._restart_atom(X, atoms, codes, j, used_for_restart)
                continue
            # error of the users with atom j's contribution added back
            E = (X[users] - codes[users] @ atoms + np.outer(codes[users, j], atoms[j])).T
            a, g = _dominant_pair(E, atoms[j])
            atoms[j] = a
            codes[users, j] = g

    def _restart_atom(self, X, atoms, codes, j, taken):
        err = _squared_errors(X, codes, atoms)
        order = np.lexsort((np.arange(len(err)), -err))
        for i in order:
            if i not in taken and err[i] > 0.0:
                taken.add(int(i))
                r = X[i] - codes[i] @ atoms
                atoms[j] = r / np.linalg.norm(r)
                logger.debug("ksvd: atom %d unused, reinitialised from word %d", j, i)
                return

    def transform(self, X):
        check_is_fitted(self, "atoms_")
        X = check_array(X, dtype=np.float64)
        return self._code_all(X, self.atoms_, self._sparsity())


class DiagonalGMM(TransformerMixin, BaseEstimator):
    """Gaussian mixture with diagonal covariances fitted by EM.

    Means start from k-means++ seeding, mixing weights start uniform and the
    per-axis variances are floored at ``var_floor``. ``transform`` returns the
    posterior responsibilities.
    """

    def __init__(self, n_components=40, max_iter=100, tol=1e-7, var_floor=1e-6, random_state=42):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.random_state = random_state

    def _log_joint(self, X):
        var = self.variances_
        log_norm = -0.5 * (X.shape[1] * np.log(2 * np.pi) + np.log(var).sum(axis=1))
        sq = (
            (X**2) @ (1.0 / var).T
            - 2.0 * X @ (self.means_ / var).T
            + np.sum(self.means_**2 / var, axis=1)
        )
        return np.log(self.weights_) + log_norm - 0.5 * sq

    def _e_step(self, X):
        lj = self._log_joint(X)
        m = lj.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(lj - m).sum(axis=1, keepdims=True))
        resp = np.exp(lj - lse)
        return resp, float(lse.mean())

    def _m_step(self, X, resp):
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        self.weights_ = nk / nk.sum()
        self.means_ = (resp.T @ X) / nk[:, None]
        var = np.empty_like(self.means_)
        for c in range(len(nk)):
            diff = X - self.means_[c]
            var[c] = resp[:, c] @ (diff * diff) / nk[c]
        self.variances_ = np.maximum(var, self.var_floor)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        K = self.n_components
        if K < 1:
            raise ValueError("n_components must be positive")
        if K > n:
            raise VocabularyTooSmall(f"K exceeds vocabulary: K={K}, vocabulary size={n}")
        self.means_, _ = kmeans_plusplus(X, K, random_state=self.random_state)
        self.weights_ = np.full(K, 1.0 / K)
        self.variances_ = np.tile(np.maximum(X.var(axis=0), self.var_floor), (K, 1))
        self.log_likelihood_history_ = []
        self.converged_ = False
        for _ in range(self.max_iter):
            resp, ll = self._e_step(X)
            hist = self.log_likelihood_history_
            if hist and ll - hist[-1] < self.tol:
                hist.append(ll)
                self.converged_ = True
                break
            hist.append(ll)
            self._m_step(X, resp)
        else:
            resp, ll = self._e_step(X)
            self.log_likelihood_history_.append(ll)
        self.responsibilities_ = resp
        self.n_features_in_ = d
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "means_")
        return self._e_step(check_array(X, dtype=np.float64))[0]

    def transform(self, X):
        return self.predict_proba(X)

    def score(self, X, y=None):
        """Mean per-sample log-likelihood."""
        check_is_fitted(self, "means_")
        return self._e_step(check_array(X, dtype=np.float64))[1]


@dataclass(frozen=True)
class PartitionWeights:
    """Topic weight vector (length ``K``) for every token; row ``i`` belongs to ``tokens[i]``."""

    tokens: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != len(self.tokens):
            raise ValueError("weights must be an n_tokens x K matrix")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.tokens, self.weights))

    @classmethod
    def ones(cls, tokens) -> "PartitionWeights":
        """K=1 weights of 1: plain (unpartitioned) averaging."""
        tokens = tuple(tokens)
        return cls(tokens, np.ones((len(tokens), 1)))


@dataclass(frozen=True)
class Dictionary:
    atoms: np.ndarray
    tokens: tuple[str, ...]
    coefficients: np.ndarray
    sparsity_k: int
    seed: int | None = None
    residual_norms: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SoftAssignment:
    means: np.ndarray
    tokens: tuple[str, ...]
    responsibilities: np.ndarray
    variances: np.ndarray | None = None
    mixing_weights: np.ndarray | None = None
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def ksvd_fit(table: WordVectorTable, K: int, k: int, iters: int, seed: int) -> Dictionary:
    model = KSVD(n_atoms=K, sparsity=k, max_iter=iters, random_state=seed).fit(table.vectors)
    return Dictionary(
        atoms=model.atoms_,
        tokens=table.tokens,
        coefficients=model.codes_,
        sparsity_k=k,
        seed=seed,
        residual_norms=model.residual_norms_,
    )


def gmm_fit(table: WordVectorTable, K: int, iters: int, seed: int) -> SoftAssignment:
    model = DiagonalGMM(n_components=K, max_iter=iters, random_state=seed).fit(table.vectors)
    return SoftAssignment(
        means=model.means_,
        tokens=table.tokens,
        responsibilities=model.responsibilities_,
        variances=model.variances_,
        mixing_weights=model.weights_,
        seed=seed,
    )


def as_partition_weights(model: Dictionary | SoftAssignment) -> PartitionWeights:
    if isinstance(model, Dictionary):
        return PartitionWeights(model.tokens, model.coefficients)
    if isinstance(model, SoftAssignment):
        return PartitionWeights(model.tokens, model.responsibilities)
    raise TypeError(f"cannot derive partition weights from {type(model).__name__}")


# --- persistence -----------------------------------------------------------

META_FILE = "meta.txt"


def _write_meta(path: Path, fields: dict) -> None:
    atomic_write_text(path / META_FILE, "\t".join(f"{k}={v}" for k, v in fields.items()) + "\n")


def read_meta(model_dir) -> dict[str, str]:
    lines = _read_lines(Path(model_dir) / META_FILE)
    if not lines:
        raise FormatError(f"empty metadata in {model_dir}")
    meta = {}
    for item in lines[0].split("\t"):
        key, _, val = item.partition("=")
        meta[key] = val
    if "format" not in meta or "version" not in meta:
        raise FormatError(f"malformed metadata in {model_dir}")
    if int(meta["version"]) != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {meta['version']}")
    return meta


def save_dictionary(model_dir, dictionary: Dictionary) -> None:
    """Write ``meta.txt``, ``atoms.tsv`` and ``coefficients.tsv`` into ``model_dir``.

    Coefficient lines are ``token<TAB>idx:val,idx:val,...`` over nonzeros only.
    """
    model_dir = Path(model_dir)
    save_matrix(model_dir / "atoms.tsv", dictionary.atoms)
    lines = []
    for tok, row in zip(dictionary.tokens, dictionary.coefficients):
        nz = np.flatnonzero(row)
        lines.append(tok + "\t" + ",".join(f"{j}:{format_float(row[j])}" for j in nz))
    atomic_write_text(model_dir / "coefficients.tsv", "".join(ln + "\n" for ln in lines))
    _write_meta(
        model_dir,
        {
            "format": "psif-dictionary",
            "version": FORMAT_VERSION,
            "K": dictionary.K,
            "k": dictionary.sparsity_k,
            "d": dictionary.dim,
            "seed": dictionary.seed,
        },
    )


def load_dictionary(model_dir, table: WordVectorTable | None = None) -> Dictionary:
    """Inverse of :func:`save_dictionary`; residual norms are recomputed when ``table`` is given."""
    model_dir = Path(model_dir)
    meta = read_meta(model_dir)
    if meta["format"] != "psif-dictionary":
        raise FormatError(f"{model_dir} does not hold a k-SVD dictionary")
    K, d = int(meta["K"]), int(meta["d"])
    atoms = load_matrix(model_dir / "atoms.tsv")
    if atoms.shape != (K, d):
        raise FormatError(f"atoms shape {atoms.shape} disagrees with metadata ({K}, {d})")
    tokens, rows = [], []
    for lineno, line in enumerate(_read_lines(model_dir / "coefficients.tsv"), start=1):
        tok, sep, body = line.partition("\t")
        if not sep:
            raise FormatError(f"coefficients line {lineno}: missing tab")
        row = np.zeros(K)
        for item in filter(None, body.split(",")):
            j, _, val = item.partition(":")
            row[int(j)] = float(val)
        tokens.append(tok)
        rows.append(row)
    coefs = np.array(rows).reshape(len(rows), K)
    residuals = None
    if table is not None:
        X = np.array([table[t] for t in tokens]).reshape(len(tokens), d)
        residuals = np.sqrt(_squared_errors(X, coefs, atoms))
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return Dictionary(atoms, tuple(tokens), coefs, int(meta["k"]), seed, residuals)


def save_soft_assignment(model_dir, sa: SoftAssignment) -> None:
    model_dir = Path(model_dir)
    save_matrix(model_dir / "means.tsv", sa.means)
    if sa.variances is not None:
        save_matrix(model_dir / "variances.tsv", sa.variances)
    if sa.mixing_weights is not None:
        save_matrix(model_dir / "mixing_weights.tsv", sa.mixing_weights)
    body = "".join(
        tok + "\t" + "\t".join(format_float(x) for x in row) + "\n"
        for tok, row in zip(sa.tokens, sa.responsibilities)
    )
    atomic_write_text(model_dir / "responsibilities.tsv", body)
    _write_meta(
        model_dir,
        {"format": "psif-gmm", "version": FORMAT_VERSION, "K": sa.K, "d": sa.dim, "seed": sa.seed},
    )


def load_soft_assignment(model_dir) -> SoftAssignment:
    model_dir = Path(model_dir)
    meta = read_meta(model_dir)
    if meta["format"] != "psif-gmm":
        raise FormatError(f"{model_dir} does not hold a GMM partition")
    K = int(meta["K"])
    means = load_matrix(model_dir / "means.tsv")
    tokens, rows = [], []
    for lineno, line in enumerate(_read_lines(model_dir / "responsibilities.tsv"), start=1):
        parts = line.split("\t")
        if len(parts) != K + 1:
            raise FormatError(f"responsibilities line {lineno}: expected {K} values")
        tokens.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    opt = {}
    for name in ("variances", "mixing_weights"):
        p = model_dir / f"{name}.tsv"
        if p.exists():
            m = load_matrix(p)
            opt[name] = m[0] if name == "mixing_weights" else m
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return SoftAssignment(
        means, tuple(tokens), np.array(rows).reshape(len(rows), K), seed=seed, **opt
    )


def load_partition_model(model_dir, table: WordVectorTable | None = None):
    """Load whichever partitioner was saved in ``model_dir``."""
    fmt = read_meta(model_dir)["format"]
    if fmt == "psif-dictionary":
        return load_dictionary(model_dir, table)
    if fmt == "psif-gmm":
        return load_soft_assignment(model_dir)
    raise FormatError(f"unknown model format {fmt!r}")
