"""Deterministic differentiable kernel: MLPs, softmax/CE, Gumbel-Softmax, SGD.

The random-stream fillers have a compiled (Cython) and a pure-Python
implementation, selected at import; `backend_name()` reports which one is
active and HAICOLLAB_PURE_PYTHON=1 forces the fallback.
"""

from .checkpoint import load_mlp, mlp_from_dict, mlp_to_dict, save_mlp
from .gumbel import gumbel_softmax_rows, gumbel_softmax_sample
from .mlp import (
    FdReport,
    Layer,
    MlpParameters,
    affine_forward,
    finite_difference_check,
    init_mlp,
    mlp_forward,
    mlp_forward_backward,
    mlp_forward_batch,
    mlp_backward_batch,
    zeros_like_params,
)
from .ops import PROB_FLOOR, cross_entropy, one_hot, softmax
from .rng import COMPILED, Rng, backend_name, derive_seed, float_key
from .sgd import OptimizerState, init_optimizer, sgd_step

__all__ = [
    "COMPILED",
    "FdReport",
    "Layer",
    "MlpParameters",
    "OptimizerState",
    "PROB_FLOOR",
    "Rng",
    "affine_forward",
    "backend_name",
    "cross_entropy",
    "derive_seed",
    "finite_difference_check",
    "float_key",
    "gumbel_softmax_rows",
    "gumbel_softmax_sample",
    "init_mlp",
    "init_optimizer",
    "load_mlp",
    "mlp_backward_batch",
    "mlp_from_dict",
    "mlp_forward",
    "mlp_forward_backward",
    "mlp_forward_batch",
    "mlp_to_dict",
    "one_hot",
    "save_mlp",
    "sgd_step",
    "softmax",
    "zeros_like_params",
]
