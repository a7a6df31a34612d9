"""Anchor-graph transformer for graph classification, built on a minimal
tape-based autodiff engine."""

from .anchors import AnchorAssignment, Partition, assignment_matrix, louvain, modularity, random_partition
from .autodiff import Tape, Tensor, backward, parameter
from .graphs import (
    DatasetBundle,
    Graph,
    flip_edges,
    load_tu_dataset,
    make_graph,
    normalized_adjacency,
    stratified_kfold,
    synth_random_graph,
    write_tu_dataset,
)
from .model import ModelConfig, ModelParams, init_params, load_params, model_forward, save_params
from .training import AdamState, FoldResult, RunConfig, adam_step, cross_entropy_loss, cross_validate, train_fold

__version__ = "0.1.0"
