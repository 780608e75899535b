"""Bob's clear-side pipeline for obliv1d.

Feature extraction (averaged MFCC vectors), CNN training, post-training
8-bit quantization, export to the engine's qmodel text format, and golden
test-vector generation.  Talks to the engine only through its files and
command line; nothing here imports obliv1d.
"""

from .features import LABELS, FeatureDataset, extract_features, mfcc_vector
from .intref import forward, gen_test_vectors, quantize_input
from .quant import ExportError, quantize_export, quantize_model
from .train import build_model, train_model

__all__ = [
    "LABELS", "FeatureDataset", "extract_features", "mfcc_vector",
    "forward", "gen_test_vectors", "quantize_input",
    "ExportError", "quantize_export", "quantize_model",
    "build_model", "train_model",
]
