"""Datasets: synthetic ListOps, byte corpora, file I/O, batching and splits."""

from .bytes_loader import BYTE_PAD, BYTE_VOCAB, UnknownLabelError, encode_bytes, load_bytes_dataset
from .dataset import (
    FORMAT_TAG, Dataset, DatasetFormatError, iterate_batches, read_dataset, split_dataset,
    write_dataset,
)
from .listops import (
    CLOSE, CLS, N_CLASSES, OP_MAX, OP_MED, OP_MIN, OP_SM, PAD, VOCAB_SIZE, GenerationError,
    ListOpsParseError, ListOpsSpec, encode_sequence, evaluate_listops, evaluate_tree,
    generate_listops, max_expression_length, render, sample_tree, to_text, tokenize, tree_depth,
)

__all__ = [
    "Dataset", "DatasetFormatError", "FORMAT_TAG", "read_dataset", "write_dataset",
    "iterate_batches", "split_dataset",
    "ListOpsSpec", "generate_listops", "evaluate_listops", "evaluate_tree", "render",
    "tokenize", "to_text", "sample_tree", "tree_depth", "encode_sequence",
    "max_expression_length", "ListOpsParseError", "GenerationError",
    "VOCAB_SIZE", "N_CLASSES", "PAD", "CLS", "CLOSE", "OP_MAX", "OP_MIN", "OP_MED", "OP_SM",
    "load_bytes_dataset", "encode_bytes", "BYTE_PAD", "BYTE_VOCAB", "UnknownLabelError",
]
