"""Readers and writers for word vectors, corpora, frequency tables and matrices.

All text files are UTF-8 with LF line endings; a trailing newline is optional.
"""

from __future__ import annotations

import logging
import math
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class FormatError(ValueError):
    """Raised when an input file violates its text format."""


@dataclass(frozen=True, eq=False)
class WordVectorTable:
    """Vocabulary mapped to ``dim``-dimensional real vectors.

    ``vectors[i]`` is the vector of ``tokens[i]``; ``index`` is the reverse map.
    """

    tokens: tuple[str, ...]
    vectors: np.ndarray
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.tokens):
            raise ValueError(
                f"vectors must be a {len(self.tokens)} x dim matrix, got shape {vectors.shape}"
            )
        if vectors.shape[1] < 1:
            raise ValueError("dim must be positive")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("word vectors must be finite")
        index = {}
        for i, tok in enumerate(self.tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}")
            if tok in index:
                raise ValueError(f"duplicate token {tok!r}")
            index[tok] = i
        vectors.setflags(write=False)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "index", index)

    def __eq__(self, other):
        if not isinstance(other, WordVectorTable):
            return NotImplemented
        return self.tokens == other.tokens and np.array_equal(self.vectors, other.vectors)

    __hash__ = None

    @classmethod
    def from_dict(cls, entries: dict[str, Sequence[float]]) -> "WordVectorTable":
        tokens = list(entries)
        return cls(tuple(tokens), np.array([entries[t] for t in tokens], dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.index[token]]

    def subset(self, tokens: Iterable[str]) -> "WordVectorTable":
        keep = [t for t in tokens if t in self.index]
        return WordVectorTable(tuple(keep), self.vectors[[self.index[t] for t in keep]])

    def scaled(self, c: float) -> "WordVectorTable":
        return WordVectorTable(self.tokens, self.vectors * c)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[tuple[str, ...], ...]
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        docs = tuple(tuple(doc) for doc in self.documents)
        if len(docs) < 1:
            raise ValueError("corpus must contain at least one document")
        if self.ids is not None and len(self.ids) != len(docs):
            raise ValueError("ids must align with documents")
        object.__setattr__(self, "documents", docs)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def doc_ids(self) -> list[str]:
        if self.ids is not None:
            return list(self.ids)
        return [str(i) for i in range(len(self.documents))]


@dataclass(frozen=True)
class UnigramModel:
    """Unigram probabilities ``p(w) = count(w) / total``.

    Tokens that were never counted have probability 0.
    """

    counts: dict[str, int]
    probs: dict[str, float] = field(init=False, repr=False, compare=False)
    total_count: int = field(init=False)

    def __post_init__(self):
        total = 0
        for tok, c in self.counts.items():
            if c <= 0:
                raise ValueError(f"count for {tok!r} must be positive, got {c}")
            total += c
        if total == 0:
            raise ValueError("cannot estimate from empty corpus")
        object.__setattr__(self, "counts", dict(self.counts))
        object.__setattr__(self, "total_count", total)
        object.__setattr__(self, "probs", {t: c / total for t, c in self.counts.items()})

    def prob(self, token: str) -> float:
        return self.probs.get(token, 0.0)

    def __contains__(self, token: str) -> bool:
        return token in self.probs


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln[:-1] if ln.endswith("\r") else ln for ln in lines]


def _is_header(line: str) -> bool:
    parts = line.split()
    if len(parts) != 2:
        return False
    try:
        int(parts[0])
        int(parts[1])
    except ValueError:
        return False
    return True


def load_word_vectors(path) -> WordVectorTable:
    """Read a GloVe/word2vec style text file of ``token v1 ... vd`` lines."""
    lines = _read_lines(path)
    tokens: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim = None
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1 and _is_header(line):
            continue
        if not line.strip():
            continue
        parts = line.rstrip().split(" ")
        tok, raw = parts[0], parts[1:]
        if dim is None:
            dim = len(raw)
            if dim == 0:
                raise FormatError(f"no vector components at line {lineno}")
        if len(raw) != dim:
            raise FormatError(f"dimension mismatch at line {lineno}")
        try:
            vals = [float(x) for x in raw]
        except ValueError as exc:
            raise FormatError(f"bad number at line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(f"non-finite value at line {lineno}")
        if tok in seen:
            raise FormatError(f"duplicate token {tok!r} at line {lineno}")
        seen.add(tok)
        tokens.append(tok)
        rows.append(vals)
    if dim is None:
        raise FormatError(f"no word vectors in {path}")
    return WordVectorTable(tuple(tokens), np.array(rows, dtype=np.float64))


def save_word_vectors(path, table: WordVectorTable, header: bool = False) -> None:
    out = []
    if header:
        out.append(f"{len(table)} {table.dim}")
    for tok, vec in zip(table.tokens, table.vectors):
        out.append(" ".join([tok, *(repr(float(x)) for x in vec)]))
    atomic_write_text(path, "\n".join(out) + ("\n" if out else ""))


_ASCII_WS = re.compile(r"[ \t\n\v\f\r]+")


def tokenize(line: str, lowercase: bool = False) -> tuple[str, ...]:
    """Split on ASCII whitespace only; no other normalisation unless ``lowercase``."""
    if lowercase:
        line = line.lower()
    return tuple(t for t in _ASCII_WS.split(line) if t)


def load_corpus(path, lowercase: bool = False) -> Corpus:
    """One document per line; blank lines are kept as empty documents."""
    lines = _read_lines(path)
    if not lines:
        raise FormatError(f"corpus {path} has no lines")
    return Corpus(tuple(tokenize(ln, lowercase) for ln in lines))


def estimate_unigram(corpus: Corpus | Iterable[Sequence[str]]) -> UnigramModel:
    counts: Counter[str] = Counter()
    for doc in corpus:
        counts.update(doc)
    if not counts:
        raise ValueError("cannot estimate from empty corpus")
    return UnigramModel(dict(counts))


def load_unigram(path) -> UnigramModel:
    counts: dict[str, int] = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"expected token<TAB>count at line {lineno}")
        tok, raw = parts
        try:
            c = int(raw)
        except ValueError:
            raise FormatError(f"count is not an integer at line {lineno}") from None
        if c <= 0:
            raise FormatError(f"nonpositive count at line {lineno}")
        counts[tok] = counts.get(tok, 0) + c
    if not counts:
        raise FormatError(f"no counts in {path}")
    return UnigramModel(counts)


def save_unigram(path, model: UnigramModel) -> None:
    body = "".join(f"{t}\t{c}\n" for t, c in model.counts.items())
    atomic_write_text(path, body)


def format_float(x: float) -> str:
    # repr gives the shortest string that round-trips exactly
    return repr(float(x))


def save_matrix(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    body = "".join("\t".join(format_float(x) for x in row) + "\n" for row in m)
    atomic_write_text(path, body)


def load_matrix(path) -> np.ndarray:
    rows = []
    width = None
    for i, line in enumerate(_read_lines(path)):
        vals = [float(x) for x in line.split("\t")] if line else []
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise FormatError(f"ragged matrix: row {i} has {len(vals)} values, expected {width}")
        rows.append(vals)
    if not rows:
        return np.empty((0, 0))
    return np.array(rows, dtype=np.float64)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
