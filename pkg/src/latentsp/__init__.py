"""Latent-variable structured prediction."""
from .graph import FactorGraph, GraphError, HiddenSubgraph, build_graph, grid_graph, hidden_subgraph
from .harness import GridSpec, evaluate_accuracy, generate_icml_tag, predict, synthesize_dataset
from .inference import (
    MessageSet,
    decode_map,
    dual_value,
    local_beliefs,
    solve_latent_subproblem,
    sweep,
    update_messages_block,
)
from .kernels import BACKEND
from .learning import LineSearchConfig, TrainState, line_search, objective, train, weight_gradient
from .model import (
    HIDDEN,
    Example,
    HyperParams,
    ModelParams,
    feature_expectations,
    hamming_loss_tables,
    latent_potentials,
    make_example,
    reparameterize,
)
from .tables import BeliefSet, PotentialSet

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "HIDDEN", "BeliefSet", "Example", "FactorGraph", "GraphError", "GridSpec",
    "HiddenSubgraph", "HyperParams", "LineSearchConfig", "MessageSet", "ModelParams",
    "PotentialSet", "TrainState", "build_graph", "decode_map", "dual_value", "evaluate_accuracy",
    "feature_expectations", "generate_icml_tag", "grid_graph", "hamming_loss_tables",
    "hidden_subgraph", "latent_potentials", "line_search", "local_beliefs", "make_example",
    "objective", "predict", "reparameterize", "solve_latent_subproblem", "sweep",
    "synthesize_dataset", "train", "update_messages_block", "weight_gradient",
]
