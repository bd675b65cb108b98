"""hfgraph: heart-failure prediction on patient similarity graphs.

Pipeline pieces: EHR representations (ehr), synthetic cohorts (synth),
cosine KNN graphs (graph), a tape-based autodiff substrate (autodiff), GNN
layers (gnn), imbalance-aware training (train), exact metrics (metrics),
non-graph baselines (baselines), and interpretability tooling (interpret).
"""

__version__ = "0.1.0"

from .ehr import (
    CodeKind,
    CohortExclusion,
    EmbeddingStore,
    Label,
    MedicalCode,
    PatientRecord,
    PatientVector,
    UnrepresentablePatient,
    Visit,
)
from .graph import SimilarityGraph, SplitSpec, build_knn_graph, select_k_by_distortion, split_nodes
from .gnn import AttentionDump, GnnModel, LayerConfig, build_model, load_model, save_model
from .metrics import ConfusionMatrix, MetricReport, compute_report
from .synth import SynthConfig
from .train import LossConfig, TrainConfig, train_model

__all__ = [
    "AttentionDump",
    "CodeKind",
    "CohortExclusion",
    "ConfusionMatrix",
    "EmbeddingStore",
    "GnnModel",
    "Label",
    "LayerConfig",
    "LossConfig",
    "MedicalCode",
    "MetricReport",
    "PatientRecord",
    "PatientVector",
    "SimilarityGraph",
    "SplitSpec",
    "SynthConfig",
    "TrainConfig",
    "UnrepresentablePatient",
    "Visit",
    "build_knn_graph",
    "build_model",
    "compute_report",
    "load_model",
    "save_model",
    "select_k_by_distortion",
    "split_nodes",
    "train_model",
    "__version__",
]
