"""Secure two- and three-party inference for quantized 1-D convolutional
nets, with a plaintext integer oracle that secure runs must match bit for
bit under deterministic truncation.

Quick tour: load a model with `model_io.load_model`, classify in the clear
with `qnn.infer`, or run every party in-process with `sim.simulate` and a
`qnn.SecureEngine` per party.  The `obliv1d` command wraps the same pieces
for operators.
"""

from .errors import (BoundError, FormatError, Obliv1dError, PreprocExhausted,
                     ProtocolAbort, RingMismatchError, TransportError,
                     UsageError)
from .ring import mod2k, prime64, ring_by_name
from .sharing import scheme_info
from .dealer import TrustedDealer
from .protocols import Session
from .qnn import (QuantizedModel, QuantParams, QConv1D, QAvgPool1D, QDense,
                  Flatten, ArgMaxOutput, SecureEngine, compile_plan, infer,
                  oracle_infer)
from .model_io import (gen_random_model, load_input, load_model,
                       load_test_vectors, write_input, write_model,
                       write_test_vectors)
from .sim import simulate

__version__ = "0.1.0"

__all__ = [
    "ArgMaxOutput", "BoundError", "Flatten", "FormatError", "Obliv1dError",
    "PreprocExhausted", "ProtocolAbort", "QAvgPool1D", "QConv1D", "QDense",
    "QuantParams", "QuantizedModel", "RingMismatchError", "SecureEngine",
    "Session", "TransportError", "TrustedDealer", "UsageError",
    "compile_plan", "gen_random_model", "infer", "load_input", "load_model",
    "load_test_vectors", "mod2k", "oracle_infer", "prime64", "ring_by_name",
    "scheme_info", "simulate", "write_input", "write_model",
    "write_test_vectors",
]
