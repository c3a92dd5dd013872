"""STS and classification datasets, the STS protocol, and evaluation reports."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus_io import FormatError, _read_lines, atomic_write_text, tokenize
from .metrics import pearson

logger = logging.getLogger(__name__)

Doc = tuple[str, ...]


@dataclass(frozen=True)
class StsPairSet:
    pairs: tuple[tuple[Doc, Doc, float], ...]

    def __post_init__(self):
        for a, b, g in self.pairs:
            if not math.isfinite(g):
                raise ValueError("gold scores must be finite")

    def __len__(self):
        return len(self.pairs)

    def sentences(self) -> list[Doc]:
        return [s for a, b, _ in self.pairs for s in (a, b)]


@dataclass(frozen=True)
class LabeledSet:
    """Documents with labels; multilabel entries are tuples of label strings."""

    docs: tuple[Doc, ...]
    labels: tuple
    multilabel: bool = False


def load_sts_pairs(path, lowercase: bool = False) -> StsPairSet:
    """``sentence_a<TAB>sentence_b<TAB>gold`` per line."""
    pairs = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"expected 3 tab-separated fields at line {lineno}")
        try:
            gold = float(parts[2])
        except ValueError:
            raise FormatError(f"gold score is not a number at line {lineno}") from None
        if not math.isfinite(gold):
            raise FormatError(f"non-finite gold score at line {lineno}")
        pairs.append((tokenize(parts[0], lowercase), tokenize(parts[1], lowercase), gold))
    return StsPairSet(tuple(pairs))


def load_labeled(path, multilabel: bool = False, lowercase: bool = False) -> LabeledSet:
    """``label<TAB>document`` per line; multilabel labels are comma-separated."""
    docs, labels = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        label, sep, text = line.partition("\t")
        if not sep:
            raise FormatError(f"expected label<TAB>document at line {lineno}")
        if multilabel:
            labels.append(tuple(x for x in label.split(",") if x))
        else:
            if not label:
                raise FormatError(f"empty label at line {lineno}")
            labels.append(label)
        docs.append(tokenize(text, lowercase))
    if not docs:
        raise FormatError(f"no labelled documents in {path}")
    return LabeledSet(tuple(docs), tuple(labels), multilabel)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def sts_scores(pairs: StsPairSet, embed: Callable[[Sequence[str]], np.ndarray]):
    """Cosine similarity of every embeddable pair.

    Pairs where either side embeds to the zero vector are dropped.
    Returns ``(predicted, gold, n_dropped)``.
    """
    pred, gold = [], []
    dropped = 0
    for a, b, g in pairs.pairs:
        ea, eb = embed(a), embed(b)
        if not (np.any(ea) and np.any(eb)):
            dropped += 1
            continue
        pred.append(cosine(ea, eb))
        gold.append(g)
    if dropped:
        logger.warning("dropped %d STS pair(s) with a zero embedding", dropped)
    return np.array(pred), np.array(gold), dropped


def sts_evaluate(pairs: StsPairSet, embed: Callable[[Sequence[str]], np.ndarray]) -> float:
    """Pearson correlation between embedding cosines and gold scores."""
    pred, gold, _ = sts_scores(pairs, embed)
    return pearson(pred, gold)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    config: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite")

    def as_text(self) -> str:
        width = max(len(k) for k in [*self.metrics, *self.config]) if self.metrics else 0
        lines = [f"{k:<{width}}  {_fmt(v)}" for k, v in self.metrics.items()]
        if self.config:
            lines.append("")
            lines += [f"{k:<{width}}  {v}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"

    def as_key_values(self) -> str:
        items = list(self.metrics.items()) + [(f"config.{k}", v) for k, v in self.config.items()]
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items)

    def write(self, path) -> None:
        atomic_write_text(path, self.as_key_values())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
