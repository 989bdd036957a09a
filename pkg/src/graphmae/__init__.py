"""Masked graph autoencoder: a numpy autodiff engine, sparse GNN layers,
masked-feature pretraining with the scaled cosine error, and frozen-encoder
evaluation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ArchitectureMismatchError,
    FormatError,
    GraphMAEError,
    NonFiniteError,
    NumericDomainError,
    ParseError,
    ValidationError,
)
from .graph import (  # noqa: E402
    CsrAdjacency,
    FeatureSpec,
    Graph,
    GraphSet,
    NodeSplit,
    generate_sbm,
    generate_sbm_graphset,
    load_graph,
    load_graphset,
    split_nodes,
)
from .masking import MaskConfig, MaskPlan, sample_mask  # noqa: E402
from .loss import LossConfig, sce_loss, mse_loss  # noqa: E402
from .training import GraphMAE, OptimConfig, RunConfig, pretrain  # noqa: E402
from .evaluation import EvalReport, ProbeConfig, embed, kfold_graph_eval, linear_probe  # noqa: E402
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402

__all__ = [
    "ArchitectureMismatchError", "FormatError", "GraphMAEError", "NonFiniteError", "NumericDomainError",
    "ParseError", "ValidationError", "CsrAdjacency", "FeatureSpec", "Graph", "GraphSet", "NodeSplit",
    "generate_sbm", "generate_sbm_graphset", "load_graph", "load_graphset", "split_nodes", "MaskConfig",
    "MaskPlan", "sample_mask", "LossConfig", "sce_loss", "mse_loss", "GraphMAE", "OptimConfig", "RunConfig",
    "pretrain", "EvalReport", "ProbeConfig", "embed", "kfold_graph_eval", "linear_probe", "load_checkpoint",
    "save_checkpoint",
]
