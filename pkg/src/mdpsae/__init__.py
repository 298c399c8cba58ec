"""Dirichlet-process-mixture hierarchical logistic model for small area estimation."""

__version__ = "0.1.0"

from .kernels import rng_stream  # noqa: E402
from .model import CellRecord, Dataset, HyperConfig, ModelState, validate  # noqa: E402
from .sampler import ChainOutput, Sampler, run_chain  # noqa: E402
from .predict import (  # noqa: E402
    PredictionTarget,
    parametric_fit,
    posterior_totals,
    sample_average_estimate,
    summarize_totals,
    synthetic_estimate,
)
from .synthetic import TruthSpec, generate_synthetic  # noqa: E402

__all__ = [
    "CellRecord", "ChainOutput", "Dataset", "HyperConfig", "ModelState", "PredictionTarget",
    "Sampler", "TruthSpec", "generate_synthetic", "parametric_fit", "posterior_totals",
    "rng_stream", "run_chain", "sample_average_estimate", "summarize_totals",
    "synthetic_estimate", "validate",
]
