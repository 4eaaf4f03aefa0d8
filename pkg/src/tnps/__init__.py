"""Tensor-network permutation search: search over mode-vertex mappings and
integer bond ranks for a fixed tensor-network format."""

from .estimators import StructureFit, TNGASearch, TNLSSearch, search_fit_config
from .fitting import FitConfig, FitResult, fit, gradient, masked_rse, rse
from .graphs import (
    SpaceCount,
    TemplateGraph,
    count_space,
    enumerate_automorphisms,
    enumerate_ball,
    enumerate_class,
    enumerate_shell,
    load_graph,
    make_template,
    sample_local,
    save_graph,
    semi_metric,
    word_metric,
)
from .model import (
    GroundTruth,
    TnModel,
    TnStructure,
    contract_network,
    efficiency,
    generate_synthetic,
    load_model,
    param_count,
    phi,
    save_model,
    structure_from_dict,
    structure_to_dict,
)
from .search import (
    GaConfig,
    Objective,
    SearchConfig,
    SearchResult,
    decode_random_keys,
    derive_fit_seed,
    enumerate_structures,
    objective_eval,
    sample_rank,
    tnga_plus,
    tnls,
)
from .tensor import (
    IndexLabel,
    contract_pair,
    frobenius_norm,
    inverse_vdt,
    load_tnsb,
    load_tns,
    permute_modes,
    save_tnsb,
    save_tns,
    tensorize_reshape,
    tensorize_vdt,
)

__version__ = "0.1.0"
