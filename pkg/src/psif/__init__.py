"""Partitioned smooth-inverse-frequency (P-SIF) document embeddings."""

from .classify import LogisticRegressionGD, run_cross_validation, train_linear_classifier
from .corpus_io import (
    Corpus,
    UnigramModel,
    WordVectorTable,
    estimate_unigram,
    load_corpus,
    load_matrix,
    load_unigram,
    load_word_vectors,
    save_matrix,
    save_unigram,
    save_word_vectors,
)
from .embedding import (
    EmbeddingMatrix,
    PSIFEmbedder,
    SifParams,
    WordTopicTable,
    build_word_topic_table,
    embed_corpus,
    embed_document,
    load_embedding_matrix,
    remove_common_component,
    save_embedding_matrix,
    sif_weight,
)
from .evaluation import StsPairSet, sts_evaluate
from .kernels import KernelKind, kernel, kernel_matrix
from .metrics import multiclass_metrics, multilabel_metrics, pearson
from .partition import (
    KSVD,
    DiagonalGMM,
    Dictionary,
    PartitionWeights,
    SoftAssignment,
    as_partition_weights,
    gmm_fit,
    ksvd_fit,
    load_partition_model,
    omp_sparse_code,
    save_dictionary,
    save_soft_assignment,
)

__version__ = "0.1.0"
