"""Randomized benchmarking of two-qubit gates with leakage.

Qutrit-per-qubit channel algebra, the two-qubit Clifford group, noise
models with leakage and seepage, exact twirls, a shot-level RB simulator,
decay fitting and a small command-line front end.
"""

__version__ = "0.1.0"

from .hilbert import QuantumChannel, SpaceLayout, build_layout  # noqa: E402
from .clifford import CliffordGroup, GateSet, clifford_group, get_gateset  # noqa: E402
from .noise import GadgetModel, NoiseModel, total_error_channel  # noqa: E402
from .twirl import ChannelParameters, extract_parameters, twirl  # noqa: E402
from .simulate import RBDataset, RBProtocolConfig, estimate_decays, exact_twirled_decay, run_protocol  # noqa: E402
from .fitting import EstimateReport, FitResult, analyze_curves, analyze_dataset, bootstrap  # noqa: E402
from .experiments import SweepSpec, heatmap_sweep, run_cell, sequence_lengths  # noqa: E402

__all__ = [
    "ChannelParameters",
    "CliffordGroup",
    "EstimateReport",
    "FitResult",
    "GadgetModel",
    "GateSet",
    "NoiseModel",
    "QuantumChannel",
    "RBDataset",
    "RBProtocolConfig",
    "SpaceLayout",
    "SweepSpec",
    "analyze_curves",
    "analyze_dataset",
    "bootstrap",
    "build_layout",
    "clifford_group",
    "estimate_decays",
    "exact_twirled_decay",
    "extract_parameters",
    "get_gateset",
    "heatmap_sweep",
    "run_cell",
    "run_protocol",
    "sequence_lengths",
    "total_error_channel",
    "twirl",
]
