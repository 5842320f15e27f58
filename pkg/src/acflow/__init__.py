"""Attentive contractive normalizing flows in pure numpy.

Invertible residual flows whose inner networks combine spectral-normalized
dense layers with an L2 self-attention residual carrying a closed-form
Lipschitz certificate, so every block stays a contraction: fixed-point
inversion converges and the power-series log-determinant applies.
"""

from .analysis import (
    InterpolationSpec,
    PerturbationSweep,
    certify,
    empirical_lipschitz,
    interpolate,
    perturbation_sweep,
)
from .attention import (
    DotAttentionParams,
    L2AttentionParams,
    attention_block,
    dot_attention_block,
    l2_attention_forward,
    lambert_w0,
    lipschitz_bound,
)
from .block import (
    ContractiveBlock,
    LogDetEstimate,
    block_forward,
    block_inverse,
    logdet_exact,
    logdet_hutchinson,
    logdet_roulette,
    logdet_series,
    make_block,
)
from .cli import cli_main
from .datasets import ToyDataset, dequantize, generate_dataset
from .errors import (
    AcflowError,
    CertificateError,
    CheckpointFormatError,
    ConvergenceError,
    DomainError,
    ParameterError,
    ShapeError,
)
from .flow import (
    FlowModel,
    ModelConfig,
    bits_per_dim,
    build_model,
    load_checkpoint,
    log_prob,
    sample,
    save_checkpoint,
)
from .layers import SpectralLinear, clipswish, elu, lipswish, spectral_norm
from .tensor import GradMap, Tape, Tensor, backward, vjp
from .training import TrainConfig, paired_convergence_run, train

__all__ = [
    "AcflowError",
    "CertificateError",
    "CheckpointFormatError",
    "ContractiveBlock",
    "ConvergenceError",
    "DomainError",
    "DotAttentionParams",
    "FlowModel",
    "GradMap",
    "InterpolationSpec",
    "L2AttentionParams",
    "LogDetEstimate",
    "ModelConfig",
    "ParameterError",
    "PerturbationSweep",
    "ShapeError",
    "SpectralLinear",
    "Tape",
    "Tensor",
    "ToyDataset",
    "TrainConfig",
    "attention_block",
    "backward",
    "bits_per_dim",
    "block_forward",
    "block_inverse",
    "build_model",
    "certify",
    "cli_main",
    "clipswish",
    "dequantize",
    "dot_attention_block",
    "elu",
    "empirical_lipschitz",
    "generate_dataset",
    "interpolate",
    "l2_attention_forward",
    "lambert_w0",
    "lipswish",
    "lipschitz_bound",
    "load_checkpoint",
    "log_prob",
    "logdet_exact",
    "logdet_hutchinson",
    "logdet_roulette",
    "logdet_series",
    "make_block",
    "paired_convergence_run",
    "perturbation_sweep",
    "sample",
    "save_checkpoint",
    "spectral_norm",
    "train",
    "vjp",
]

__version__ = "0.1.0"
