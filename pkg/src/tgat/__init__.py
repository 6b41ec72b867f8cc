"""Inductive representation learning on temporal graphs.

From-scratch implementation of a functional time encoder with learnable
frequencies, temporal graph attention layers over causality-respecting
neighborhood samples, and a train/evaluate/analyze pipeline for time-aware
link prediction and downstream node classification.
"""

from .autodiff import Tape, Tensor, backward, grad_check
from .layer import (
    Dims,
    LayerParams,
    SamplingConfig,
    TgatModel,
    attend_head,
    build_entity_matrix,
    embed,
    embed_tensor,
    head_parameter_formula,
    layer_forward,
    load_checkpoint,
    save_checkpoint,
)
from .metrics import accuracy, average_precision, roc_auc, spearman
from .temporal_graph import (
    AccessMonitor,
    NeighborhoodSample,
    SplitSpec,
    TemporalEvent,
    TemporalGraph,
    build_graph,
    chronological_split,
    ingest,
    load_graph,
    load_graph_csv,
    mask_unseen,
    sample_negative,
    save_graph,
    temporal_neighborhood,
)
from .time_encoding import (
    KernelCheckReport,
    PositionalEncoder,
    TimeEncoder,
    kernel_convergence_check,
)
from .training import (
    AdamState,
    EvalMetrics,
    MlpConfig,
    TrainConfig,
    adam_step,
    attention_report,
    evaluate_links,
    link_loss,
    node_classify,
    train,
)

__version__ = "0.1.0"
