"""Product-quantisation top-K item scoring for large recommendation catalogues."""

from .codebook import QuantisationReport, build_pq_codebook, compression_ratio
from .core import (
    Codebook,
    MemoryBudgetError,
    PQConfig,
    PQError,
    SequenceEmbedding,
    SubIdScoreMatrix,
    SubItemEmbeddings,
    TopKResult,
    ValidationError,
    generate_synthetic,
    set_memory_budget,
    split_embedding,
    validate_instance,
)
from .formats import FormatError, read_dense, read_instance, write_dense, write_instance
from .scoring import (
    DenseEmbeddingMatrix,
    ItemSubset,
    compute_sub_id_scores,
    matmul_topk,
    pq_item_scores,
    pq_topk,
    recjpq_score,
    reconstruct_dense,
    reconstruct_item_embedding,
    score_item,
    set_threads,
    top_k_select,
)

__version__ = "0.1.0"
