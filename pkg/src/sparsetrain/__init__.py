"""Channel-level sparse neural-network training.

Both the network weights and a per-channel keep-probability vector are
trained together, using only sparse subnetwork passes: two masked forward
evaluations per step drive a paired score-function gradient for the
probabilities, and one masked backward drives the weights. Pruned channels
are never computed, in either direction.
"""

from .data import DatasetHandle, load_idx_dataset, synth_blobs
from .diagnostics import (enumerate_expectation, enumerate_variances,
                          variance_report)
from .errors import (CheckpointError, ConfigError, ContractViolation,
                     DataFormatError, DimensionError, NonFiniteLossError,
                     ParameterError)
from .estimator import SparseChannelClassifier
from .estimators import GradEstimate, pge, ste_baseline, vr_pge
from .flops import flops_report, forward_flops, savings_paired_sparse
from .models import build_model, make_mlp
from .network import (Conv, Dense, Flatten, MaxPool, NetworkParams,
                      NetworkSpec, Relu, backward_weights, forward,
                      forward_logits, forward_relaxed)
from .structure import (SeededSampler, StructureVector, clamp_interior,
                        initial_structure, preconditioner, project,
                        sample_mask, score)
from .training import FinalReport, MetricsRecord, TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "ContractViolation", "Conv",
    "DataFormatError", "DatasetHandle", "Dense", "DimensionError",
    "FinalReport", "Flatten", "GradEstimate", "MaxPool", "MetricsRecord",
    "NetworkParams", "NetworkSpec", "NonFiniteLossError", "ParameterError",
    "Relu", "SeededSampler", "SparseChannelClassifier", "StructureVector",
    "TrainConfig", "Trainer", "backward_weights", "build_model",
    "clamp_interior", "enumerate_expectation", "enumerate_variances",
    "flops_report", "forward", "forward_flops", "forward_logits",
    "forward_relaxed", "initial_structure", "load_idx_dataset", "make_mlp",
    "pge", "preconditioner", "project", "sample_mask",
    "savings_paired_sparse", "score", "ste_baseline", "synth_blobs",
    "variance_report", "vr_pge",
]
