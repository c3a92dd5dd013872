"""``psif`` command line: fit, embed, kernel, eval-sts, eval-classify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import corpus_io as cio
from .classify import LogisticRegressionGD, run_cross_validation
from .embedding import (
    DEFAULT_A,
    EmbeddingMatrix,
    SifParams,
    build_word_topic_table,
    embed_corpus,
    save_embedding_matrix,
)
from .evaluation import EvalReport, load_labeled, load_sts_pairs, sts_scores
from .kernels import EmptyDocumentError, KernelKind, kernel_matrix, kernel
from .metrics import multiclass_metrics, multilabel_metrics, pearson
from .partition import (
    KSVD,
    DiagonalGMM,
    Dictionary,
    SoftAssignment,
    as_partition_weights,
    load_partition_model,
    read_meta,
    save_dictionary,
    save_soft_assignment,
)

logger = logging.getLogger("psif")


class CliError(Exception):
    pass


# --- argument parsing --------------------------------------------------------


def _common(p, vectors=True):
    if vectors:
        p.add_argument("--vectors", required=True, help="word vector text file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    p.add_argument("--lowercase", action="store_true", help="lowercase all input text")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _sif(p):
    p.add_argument("--model", required=True, help="directory written by `psif fit`")
    p.add_argument("--freq", help="token<TAB>count file; default: estimate from the input text")
    p.add_argument("--weight-a", type=float, default=DEFAULT_A, dest="weight_a")
    p.add_argument("--no-component-removal", action="store_true", dest="no_component_removal")
    p.add_argument("--reuse-component", dest="reuse_component", help="one-row TSV common direction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psif", description="Partitioned SIF document embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="learn the word partition (k-SVD or GMM)")
    _common(p)
    p.add_argument("--k-atoms", type=int, default=40, dest="k_atoms", help="number of topics K")
    p.add_argument("--sparsity", type=int, help="nonzeros per k-SVD code (default K/2)")
    p.add_argument("--partitioner", choices=["ksvd", "gmm"], default="ksvd")
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--out", required=True, help="model directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("embed", help="embed a corpus, one document per line")
    _common(p)
    _sif(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("kernel", help="document similarity kernels")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", required=True, help="K1, K2, K3 or K4 (or K1_avg, ...)")
    p.add_argument("--model", help="model directory (required for K2/K3)")
    p.add_argument("--pairs", help="TSV of doc-index pairs; default: full matrix")
    p.add_argument("--out", help="output directory; default: standard output")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("eval-sts", help="Pearson r of embedding cosines against gold scores")
    _common(p)
    _sif(p)
    p.add_argument("--pairs", required=True, help="sentence_a<TAB>sentence_b<TAB>gold")
    p.add_argument("--out", help="directory for report.txt")
    p.set_defaults(func=cmd_eval_sts)

    p = sub.add_parser("eval-classify", help="train a linear classifier on fixed embeddings")
    _common(p)
    _sif(p)
    p.add_argument("--train", required=True, help="label(s)<TAB>document")
    p.add_argument("--test", required=True)
    p.add_argument("--mode", choices=["multiclass", "multilabel"], default="multiclass")
    p.add_argument("--l2", default="1e-4", help="comma-separated L2 grid; >1 value triggers CV")
    p.add_argument("--cv-folds", type=int, default=5, dest="cv_folds")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--top-k", default="1,3,5", dest="top_k", help="k values for P@k and nDCG@k")
    p.add_argument("--out", help="directory for report.txt")
    p.set_defaults(func=cmd_eval_classify)
    return parser


# --- shared helpers ----------------------------------------------------------


def _load_table(args):
    return cio.load_word_vectors(args.vectors)


def _load_weights(args, table):
    meta = read_meta(args.model)
    if int(meta["d"]) != table.dim:
        raise CliError(f"model dimension {meta['d']} does not match vector dimension {table.dim}")
    return as_partition_weights(load_partition_model(args.model))


def _unigram(args, docs):
    if args.freq:
        return cio.load_unigram(args.freq)
    return cio.estimate_unigram(docs)


def _component(args):
    if not args.reuse_component:
        return None
    m = cio.load_matrix(args.reuse_component)
    if m.shape[0] != 1:
        raise CliError(f"{args.reuse_component} must contain exactly one row")
    return m[0]


def _embed(args, table, weights, docs, unigram, component=None) -> EmbeddingMatrix:
    tt = build_word_topic_table(table, weights)
    params = SifParams(args.weight_a, not args.no_component_removal)
    return embed_corpus(docs, tt, unigram, params, component)


# --- commands ----------------------------------------------------------------


def cmd_fit(args) -> int:
    table = _load_table(args)
    K = args.k_atoms
    if K > len(table):
        raise CliError(f"K exceeds vocabulary: K={K}, vocabulary size={len(table)}")
    out = Path(args.out)
    if args.partitioner == "ksvd":
        k = args.sparsity if args.sparsity is not None else max(1, K // 2)
        if not 1 <= k <= K:
            raise CliError(f"sparsity k={k} must be in [1, {K}]")
        model = KSVD(n_atoms=K, sparsity=k, max_iter=args.iters, random_state=args.seed)
        model.fit(table.vectors)
        save_dictionary(
            out,
            Dictionary(model.atoms_, table.tokens, model.codes_, k, args.seed, model.residual_norms_),
        )
        report = EvalReport(
            {
                "reconstruction_mse": model.mse_history_[-1],
                "mean_residual_norm": float(model.residual_norms_.mean()),
            },
            {"partitioner": "ksvd", "K": K, "k": k, "iters": args.iters, "seed": args.seed},
        )
    else:
        model = DiagonalGMM(n_components=K, max_iter=args.iters, random_state=args.seed)
        model.fit(table.vectors)
        save_soft_assignment(
            out,
            SoftAssignment(
                model.means_,
                table.tokens,
                model.responsibilities_,
                model.variances_,
                model.weights_,
                args.seed,
            ),
        )
        report = EvalReport(
            {"mean_log_likelihood": model.log_likelihood_history_[-1]},
            {"partitioner": "gmm", "K": K, "iters": args.iters, "seed": args.seed},
        )
    report.write(out / "fit_report.txt")
    sys.stdout.write(report.as_text())
    return 0


def cmd_embed(args) -> int:
    table = _load_table(args)
    weights = _load_weights(args, table)
    corpus = cio.load_corpus(args.corpus, lowercase=args.lowercase)
    emb = _embed(args, table, weights, corpus, _unigram(args, corpus), _component(args))
    out = Path(args.out)
    save_embedding_matrix(out / "embeddings.tsv", emb)
    if emb.common_direction is not None:
        cio.save_matrix(out / "component.tsv", emb.common_direction)
    print(f"embedded {len(emb)} documents, dimension {emb.dim}")
    return 0


def _read_index_pairs(path, n):
    pairs = []
    for lineno, line in enumerate(cio._read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            i, j = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise CliError(f"{path}: expected i<TAB>j at line {lineno}") from None
        if not (0 <= i < n and 0 <= j < n):
            raise CliError(f"{path}: document index out of range at line {lineno}")
        pairs.append((i, j))
    return pairs


def cmd_kernel(args) -> int:
    kind = KernelKind.parse(args.kind)
    table = _load_table(args)
    weights = None
    if kind.needs_topics:
        if not args.model:
            raise CliError(f"{kind.value} needs --model")
        weights = _load_weights(args, table)
    corpus = cio.load_corpus(args.corpus, lowercase=args.lowercase)
    ids = corpus.doc_ids()
    docs = corpus.documents
    usable = []
    for i, doc in enumerate(docs):
        try:
            kernel(kind, doc, doc, table, weights)
            usable.append(i)
        except EmptyDocumentError:
            logger.warning("document %s has no in-vocabulary tokens; reported as NA", ids[i])
    ok = set(usable)
    fmt = cio.format_float
    if args.pairs:
        lines = []
        for i, j in _read_index_pairs(args.pairs, len(docs)):
            val = fmt(kernel(kind, docs[i], docs[j], table, weights)) if i in ok and j in ok else "NA"
            lines.append(f"{ids[i]}\t{ids[j]}\t{val}")
        body = "".join(ln + "\n" for ln in lines)
    else:
        full = np.full((len(docs), len(docs)), np.nan)
        if usable:
            sub = kernel_matrix(kind, [docs[i] for i in usable], table, weights)
            full[np.ix_(usable, usable)] = sub
        rows = ["\t".join(["", *ids])]
        for i, row in enumerate(full):
            rows.append("\t".join([ids[i], *("NA" if np.isnan(x) else fmt(x) for x in row)]))
        body = "".join(r + "\n" for r in rows)
    if args.out:
        cio.atomic_write_text(Path(args.out) / "kernel.tsv", body)
    else:
        sys.stdout.write(body)
    return 0


def cmd_eval_sts(args) -> int:
    table = _load_table(args)
    weights = _load_weights(args, table)
    pairs = load_sts_pairs(args.pairs, lowercase=args.lowercase)
    sentences = pairs.sentences()
    emb = _embed(args, table, weights, sentences, _unigram(args, sentences), _component(args))
    # identical token sequences embed identically, so content is a safe key
    lookup = dict(zip(sentences, emb.vectors))
    pred, gold, dropped = sts_scores(pairs, lambda doc: lookup[tuple(doc)])
    if len(pred) < 2:
        raise CliError(f"only {len(pred)} usable pair(s); need at least 2")
    r = pearson(pred, gold)
    report = EvalReport(
        {"pearson_r": r, "pearson_r_x100": 100 * r, "pairs_used": len(pred), "pairs_dropped": dropped},
        {"a": args.weight_a, "remove_component": not args.no_component_removal, "model": args.model},
    )
    if args.out:
        report.write(Path(args.out) / "report.txt")
    sys.stdout.write(report.as_text())
    return 0


def _encode_labels(train, test, multilabel):
    if multilabel:
        space = sorted({lab for labs in train.labels for lab in labs})
        index = {lab: i for i, lab in enumerate(space)}
        unseen = sorted({lab for labs in test.labels for lab in labs} - set(space))
        if unseen:
            raise CliError(f"test labels absent from training data: {', '.join(unseen)}")

        def encode(labels):
            Y = np.zeros((len(labels), len(space)), dtype=int)
            for r, labs in enumerate(labels):
                Y[r, [index[lab] for lab in labs]] = 1
            return Y

        return encode(train.labels), encode(test.labels), space
    space = sorted(set(train.labels))
    index = {lab: i for i, lab in enumerate(space)}
    unseen = sorted(set(test.labels) - set(space))
    if unseen:
        raise CliError(f"test labels absent from training data: {', '.join(unseen)}")
    return (
        np.array([index[x] for x in train.labels]),
        np.array([index[x] for x in test.labels]),
        space,
    )


def cmd_eval_classify(args) -> int:
    multilabel = args.mode == "multilabel"
    table = _load_table(args)
    weights = _load_weights(args, table)
    train = load_labeled(args.train, multilabel, args.lowercase)
    test = load_labeled(args.test, multilabel, args.lowercase)
    y_train, y_test, space = _encode_labels(train, test, multilabel)
    unigram = _unigram(args, train.docs)
    emb_train = _embed(args, table, weights, train.docs, unigram, _component(args))
    emb_test = _embed(args, table, weights, test.docs, unigram, emb_train.common_direction)

    try:
        grid = [{"l2": float(x)} for x in args.l2.split(",") if x]
    except ValueError:
        raise CliError(f"bad --l2 grid {args.l2!r}") from None
    if not grid:
        raise CliError("empty --l2 grid")
    if len(grid) > 1:
        best, _ = run_cross_validation(
            emb_train.vectors, y_train, args.cv_folds, grid, args.seed, multilabel, args.epochs
        )
    else:
        best = grid[0]
    model = LogisticRegressionGD(
        multilabel=multilabel, epochs=args.epochs, random_state=args.seed, **best
    ).fit(emb_train.vectors, y_train)

    if multilabel:
        scores = model.predict_proba(emb_test.vectors)
        metrics = {}
        for k in _top_ks(args.top_k, len(space)):
            m = multilabel_metrics(scores, y_test, k)
            metrics[f"precision@{k}"] = m[f"precision@{k}"]
            metrics[f"ndcg@{k}"] = m[f"ndcg@{k}"]
        metrics.update(
            {key: m[key] for key in ("coverage_error", "lrap", "micro_f1", "rows_without_positives")}
        )
    else:
        metrics = multiclass_metrics(model.predict(emb_test.vectors), y_test)
    report = EvalReport(
        metrics,
        {
            "mode": args.mode,
            "l2": best["l2"],
            "a": args.weight_a,
            "remove_component": not args.no_component_removal,
            "seed": args.seed,
            "model": args.model,
        },
    )
    if args.out:
        report.write(Path(args.out) / "report.txt")
    sys.stdout.write(report.as_text())
    return 0


def _top_ks(value: str, n_labels: int) -> list[int]:
    try:
        ks = sorted({int(x) for x in value.split(",") if x})
    except ValueError:
        raise CliError(f"bad --top-k {value!r}") from None
    ks = [k for k in ks if 1 <= k <= n_labels]
    return ks or [1]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except (CliError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"psif {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
