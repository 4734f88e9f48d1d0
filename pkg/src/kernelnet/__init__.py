"""Differentiable compositional kernel networks for Gaussian processes.

Kernels are built as layered nonnegative sums and products of primitive
kernel families, every unit of the graph being a valid kernel, and all
hyperparameters plus mixing weights are trained jointly by gradient ascent on
the exact GP log marginal likelihood.  Harnesses cover time-series
extrapolation, regression benchmarks, expected-improvement Bayesian
optimization, and Kronecker-structured texture completion.
"""

from .graph import (
    ActivationSpec,
    KernelValueMatrix,
    LinearSpec,
    NetworkSpec,
    ParameterStore,
    PrimitiveSlot,
    ProductSpec,
    backward,
    forward_diag,
    forward_matrix,
    spec_from_dict,
    spec_to_dict,
)
from .gp import (
    GpModel,
    Posterior,
    Standardizer,
    grad_log_marginal,
    log_marginal_likelihood,
    model_from_dict,
    model_to_dict,
    predict,
)
from .presets import plain_kernel_spec, preset
from .primitives import (
    PairwiseCache,
    Primitive,
    eval_primitive,
    grad_primitive,
    gram,
    gram_diag,
    gram_grads,
)
from .pwp import PwpExpr, PwpTerm, compile_pwp, example1_kernel, example1_network
from .train import AdamState, FitResult, TrainConfig, adam_step, fit
from .util import (
    NumericError,
    SpecError,
    StateError,
    softplus,
    softplus_inverse,
    tune_allocator,
)

tune_allocator()

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec",
    "AdamState",
    "FitResult",
    "GpModel",
    "KernelValueMatrix",
    "LinearSpec",
    "NetworkSpec",
    "NumericError",
    "PairwiseCache",
    "ParameterStore",
    "Posterior",
    "Primitive",
    "PrimitiveSlot",
    "ProductSpec",
    "PwpExpr",
    "PwpTerm",
    "SpecError",
    "Standardizer",
    "StateError",
    "TrainConfig",
    "adam_step",
    "backward",
    "compile_pwp",
    "eval_primitive",
    "example1_kernel",
    "example1_network",
    "fit",
    "forward_diag",
    "forward_matrix",
    "grad_log_marginal",
    "grad_primitive",
    "gram",
    "gram_diag",
    "gram_grads",
    "log_marginal_likelihood",
    "model_from_dict",
    "model_to_dict",
    "plain_kernel_spec",
    "predict",
    "preset",
    "softplus",
    "softplus_inverse",
    "spec_from_dict",
    "spec_to_dict",
]
