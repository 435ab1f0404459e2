"""Learn polynomial spectral graph filters for node classification.

Two regimes are provided: joint training, where filter coefficients are
ordinary parameters fitted to the training loss, and a bi-level regime
where the coefficients follow a validation-loss meta-gradient while the
MLP weights follow the training loss. A brute-force coefficient grid
search is included for comparison.
"""

from autopoly.errors import (
    AutopolyError,
    CheckpointError,
    ConfigError,
    GuardError,
    InputError,
    NumericError,
    ShapeError,
)
from autopoly.graph import Graph, from_edge_list, node_homophily, spmv
from autopoly.filters import (
    FilterSpec,
    SpectralResponse,
    apply_filter,
    dense_spectral_filter,
    init_coefficients,
    ppr_coefficients,
    spectral_response,
)

__version__ = "0.1.0"

__all__ = [
    "AutopolyError",
    "CheckpointError",
    "ConfigError",
    "FilterSpec",
    "Graph",
    "GuardError",
    "InputError",
    "NumericError",
    "ShapeError",
    "SpectralResponse",
    "apply_filter",
    "dense_spectral_filter",
    "from_edge_list",
    "init_coefficients",
    "node_homophily",
    "ppr_coefficients",
    "spectral_response",
    "spmv",
]
