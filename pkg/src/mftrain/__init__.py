"""Multiplication-free training with power-of-two quantization.

The pieces, bottom up: `potnum` is the scalar power-of-two codec and its
exact rounding rule; `quantizer` scales and quantizes whole blocks;
`mfmac` computes inner products and matmuls over quantized blocks with
shift-and-add arithmetic; `nn` is the quantization-aware training loop;
`energy` prices op mixes against a 45 nm cost table; `census` counts
what actually executed. `cli` exposes the mftrain command.
"""

from .census import OpCounts, op_census, reset_census
from .datasets import Dataset, load_csv_dataset, load_idx_dataset, synthetic_clusters
from .energy import (DEFAULT_COSTS, MethodProfile, OpCostTable, PROFILES,
                     WorkloadSpec, combined_mac_pj, compare_report,
                     iteration_energy, price_census, quant_overhead_pj,
                     savings_mac_only, savings_with_overhead)
from .errors import (ConfigError, InputError, MFTrainError, ProtocolError,
                     ShiftOverflowError, TrainingFault)
from .mfmac import mf_dot, mf_matmul, reference_dot, reference_matmul
from .nn import (LayerSpec, Network, NetworkSpec, QuantPolicy, TrainConfig,
                 evaluate, fit, train_step)
from .potnum import (PotCode, PotProduct, emax_for, pot_mul, pot_values,
                     quantize_scalar, dequantize_scalar, round_log2, shift_mul)
from .quantizer import (QuantBlock, block_stats, compute_scale,
                        correct_weight_bias, dequantize_block, quantize_block,
                        ratio_clip)

__version__ = "0.1.0"

__all__ = [
    "OpCounts", "op_census", "reset_census",
    "Dataset", "load_csv_dataset", "load_idx_dataset", "synthetic_clusters",
    "DEFAULT_COSTS", "MethodProfile", "OpCostTable", "PROFILES",
    "WorkloadSpec", "combined_mac_pj", "compare_report", "iteration_energy",
    "price_census", "quant_overhead_pj", "savings_mac_only",
    "savings_with_overhead",
    "ConfigError", "InputError", "MFTrainError", "ProtocolError",
    "ShiftOverflowError", "TrainingFault",
    "mf_dot", "mf_matmul", "reference_dot", "reference_matmul",
    "LayerSpec", "Network", "NetworkSpec", "QuantPolicy", "TrainConfig",
    "evaluate", "fit", "train_step",
    "PotCode", "PotProduct", "emax_for", "pot_mul", "pot_values",
    "quantize_scalar", "dequantize_scalar", "round_log2", "shift_mul",
    "QuantBlock", "block_stats", "compute_scale", "correct_weight_bias",
    "dequantize_block", "quantize_block", "ratio_clip",
    "__version__",
]
