"""Occluded person re-identification with token pruning and feature consolidation."""

from ._core import (
    ConfigError,
    DegenerateError,
    Error,
    FormatError,
    Gallery,
    InputError,
    Model,
    ShapeError,
    average_precision,
    cmc_curve,
    cosine_distance,
    count_flops,
    emd_distance,
    evaluate,
    generate_synthetic,
    id_loss,
    matmul,
    parse_metadata,
    query,
    sinkhorn,
    softmax_rows,
    triplet_loss,
)

__all__ = [
    "ConfigError",
    "DegenerateError",
    "Error",
    "FormatError",
    "Gallery",
    "InputError",
    "Model",
    "ShapeError",
    "average_precision",
    "cmc_curve",
    "cosine_distance",
    "count_flops",
    "emd_distance",
    "evaluate",
    "generate_synthetic",
    "id_loss",
    "matmul",
    "parse_metadata",
    "query",
    "sinkhorn",
    "softmax_rows",
    "triplet_loss",
]
