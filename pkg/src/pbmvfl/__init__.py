"""Simulator for privacy-preserving vertical federated learning.

Parties holding disjoint feature blocks train a split neural model together:
each party quantizes its embedding batch with a binomial mechanism, hides it
behind pairwise secure-aggregation masks, and a server recovers only the noisy
embedding sum, trains the fused head, and returns gradients. Companion modules
meter communication bits and account the Renyi differential-privacy budget.
"""

from .data import VerticalDataset, load_dataset_csv, make_synthetic, write_dataset_csv
from .errors import ProtocolError, SpecError
from .metrics import (
    CommLedger,
    downstream_bits_per_iter,
    masked_value_bits,
    npq_bits_per_iter,
    upstream_bits_per_iter,
)
from .pbm import (
    PbmParams,
    estimate_sum,
    estimate_sum_array,
    quantize,
    quantize_array,
    success_probability,
    theoretical_variance,
)
from .privacy import (
    RdpBudget,
    feature_budget,
    per_round_feature_budget,
    sample_budget,
    sample_group_factor,
)
from .vfl import Seeds, TrainRecord, TrainTrace, VflConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ProtocolError",
    "SpecError",
    "PbmParams",
    "success_probability",
    "quantize",
    "quantize_array",
    "estimate_sum",
    "estimate_sum_array",
    "theoretical_variance",
    "VerticalDataset",
    "make_synthetic",
    "write_dataset_csv",
    "load_dataset_csv",
    "CommLedger",
    "masked_value_bits",
    "upstream_bits_per_iter",
    "downstream_bits_per_iter",
    "npq_bits_per_iter",
    "RdpBudget",
    "feature_budget",
    "per_round_feature_budget",
    "sample_budget",
    "sample_group_factor",
    "Seeds",
    "VflConfig",
    "TrainRecord",
    "TrainTrace",
    "run_experiment",
    "__version__",
]
