"""Loss, Adam optimizer, fold training loop and cross-validation.

Training is per-graph: a fresh tape per forward pass, gradients
accumulated over `batch_size` graphs (loss averaged over the batch), one
optimizer step per batch. All randomness is derived deterministically
from (seed, fold), so reruns and fold-parallel runs are reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .anchors import AnchorAssignment, assignment_matrix, louvain, random_partition
from .autodiff import Tape, Tensor
from .errors import ConfigError, NumericError
from .graphs import DatasetBundle, Graph
from .model import ModelConfig, ModelParams, init_params, model_forward

# per-dataset hyperparameters (others fall back to RunConfig defaults)
DATASET_DEFAULTS: dict[str, dict] = {
    "MUTAG": {"num_gnn_layers": 4, "batch_size": 128},
    "NCI1": {"num_gnn_layers": 4, "batch_size": 256},
    "NCI109": {"num_gnn_layers": 5, "batch_size": 256},
    "COLLAB": {"num_gnn_layers": 5, "batch_size": 128},
    "IMDB-B": {"num_gnn_layers": 5, "batch_size": 128},
    "IMDB-BINARY": {"num_gnn_layers": 5, "batch_size": 128},
}


@dataclass
class RunConfig:
    """Complete experiment description; serializable to a key=value file."""

    dataset: str = "MUTAG"
    data_dir: str = ""
    backbone: str = "gcn"
    anchor_mode: str = "louvain"
    num_gnn_layers: int = 4
    hidden_dim: int = 256
    proj_dim: int = 256
    ffn_hidden: int = 0
    dropout: float = 0.1
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 128
    folds: int = 10
    seed: int = 42
    workers: int = 1

    def validate(self) -> None:
        if self.epochs <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs, lr and batch_size must be positive")
        if self.folds < 2:
            raise ConfigError(f"need at least 2 folds, got {self.folds}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def model_config_for(bundle: DatasetBundle, config: RunConfig) -> ModelConfig:
    return ModelConfig(
        input_dim=bundle.feature_dim,
        num_classes=bundle.num_classes,
        backbone=config.backbone,
        num_gnn_layers=config.num_gnn_layers,
        hidden_dim=config.hidden_dim,
        proj_dim=config.proj_dim,
        ffn_hidden=config.ffn_hidden,
        dropout=config.dropout,
        anchor_mode=config.anchor_mode,
    )


@dataclass
class AdamState:
    """First/second moment estimates plus step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: ModelParams) -> "AdamState":
        return cls(m={n: np.zeros_like(t.data) for n, t in params.items()},
                   v={n: np.zeros_like(t.data) for n, t in params.items()})


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    loss_trace: list[float]
    seconds: float
    params: Optional[ModelParams] = field(default=None, repr=False)


def cross_entropy_loss(logits: Tensor, label: int) -> Tensor:
    """Negative log-softmax of the true class, via max-shifted log-sum-exp.
    Gradient is softmax(logits) - one_hot(label)."""
    x = logits.data.reshape(-1)
    k = x.size
    if not 0 <= label < k:
        raise ConfigError(f"label {label} out of range [0, {k})")
    shift = x - x.max()
    log_z = np.log(np.exp(shift).sum())
    loss = np.asarray(log_z - shift[label])

    def bwd(g: np.ndarray) -> None:
        if logits.requires_grad:
            p = np.exp(shift - log_z)
            p[label] -= 1.0
            logits.accumulate_grad(g * p.reshape(logits.shape))

    return ad.custom_op(loss, (logits,), bwd)


def adam_step(params: ModelParams, state: AdamState, lr: float, weight_decay: float) -> None:
    """Classic Adam with L2 folded into the gradient (coupled decay)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise NumericError(f"gradient missing for parameter {name!r}")
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        g = p.grad + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def prepare_anchors(bundle: DatasetBundle, anchor_mode: str, seed: int,
                    graphs: Optional[Sequence[Graph]] = None) -> list[Optional[AnchorAssignment]]:
    """One frozen anchor assignment per graph.

    Louvain partitions depend only on topology; the random baseline is
    size-matched to Louvain's community count on the same graph.
    """
    graphs = bundle.graphs if graphs is None else graphs
    if anchor_mode == "full":
        return [None] * len(graphs)
    out: list[Optional[AnchorAssignment]] = []
    for idx, g in enumerate(graphs):
        part = louvain(g)
        if anchor_mode == "random":
            part = random_partition(g.num_nodes, part.num_communities,
                                    seed=_derive_seed(seed, 7, idx))
        out.append(assignment_matrix(part))
    return out


def _derive_seed(*parts: int) -> int:
    h = hashlib.sha256(np.array(parts, dtype=np.int64).tobytes()).digest()
    return int.from_bytes(h[:8], "little")


def evaluate(params: ModelParams, mc: ModelConfig, graphs: Sequence[Graph],
             anchors: Sequence[Optional[AnchorAssignment]]) -> float:
    """Accuracy in eval mode (dropout off, no tape)."""
    rng = np.random.default_rng(0)  # never consumed in eval mode
    correct = 0
    for g, assign in zip(graphs, anchors):
        logits = model_forward(g, assign, params, mc, rng, training=False)
        if int(np.argmax(logits.data)) == g.label:
            correct += 1
    return correct / len(graphs) if graphs else 0.0


def train_fold(bundle: DatasetBundle, fold_split: tuple[np.ndarray, np.ndarray],
               config: RunConfig, seed: int, fold_index: int = 0,
               anchors: Optional[Sequence[Optional[AnchorAssignment]]] = None,
               keep_params: bool = True) -> FoldResult:
    """Train on one fold's training ids, then score the held-out test ids."""
    train_ids, test_ids = fold_split
    train_ids = np.asarray(train_ids, dtype=np.int64)
    test_ids = np.asarray(test_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise ConfigError("empty training set")
    if np.intersect1d(train_ids, test_ids).size:
        raise ConfigError("train/test ids overlap")

    mc = model_config_for(bundle, config)
    init_rng = np.random.default_rng(_derive_seed(seed, fold_index, 0))
    shuffle_rng = np.random.default_rng(_derive_seed(seed, fold_index, 1))
    dropout_rng = np.random.default_rng(_derive_seed(seed, fold_index, 2))
    params = init_params(mc, init_rng)
    state = AdamState.create(params)
    if anchors is None:
        anchors = prepare_anchors(bundle, config.anchor_mode, seed)

    started = time.perf_counter()
    loss_trace: list[float] = []
    for _epoch in range(config.epochs):
        order = train_ids[shuffle_rng.permutation(train_ids.size)]
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            params.zero_grads()
            for gid in batch:
                g = bundle.graphs[gid]
                with Tape() as tape:
                    logits = model_forward(g, anchors[gid], params, mc, dropout_rng, training=True)
                    loss = cross_entropy_loss(logits, g.label)
                ad.backward(tape, loss)
                epoch_loss += float(loss.data)
            inv = 1.0 / batch.size
            for _name, p in params.items():
                p.grad *= inv
            adam_step(params, state, config.lr, config.weight_decay)
        loss_trace.append(epoch_loss / order.size)

    accuracy = evaluate(params, mc, [bundle.graphs[i] for i in test_ids],
                        [anchors[i] for i in test_ids])
    return FoldResult(fold_index, accuracy, loss_trace, time.perf_counter() - started,
                      params=params if keep_params else None)


@dataclass
class CVResult:
    folds: list[FoldResult]
    mean: float
    std: float  # population std over folds
    splits: list[tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=list)

    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])


def splits_digest(splits: Sequence[tuple[np.ndarray, np.ndarray]]) -> str:
    h = hashlib.sha256()
    for train, test in splits:
        h.update(np.asarray(train, dtype=np.int64).tobytes())
        h.update(b"|")
        h.update(np.asarray(test, dtype=np.int64).tobytes())
    return h.hexdigest()


def _run_fold_task(args) -> FoldResult:
    bundle, split, config, fold_index, keep_params = args
    anchors = prepare_anchors(bundle, config.anchor_mode, config.seed)
    return train_fold(bundle, split, config, config.seed, fold_index, anchors,
                      keep_params=keep_params)


def cross_validate(bundle: DatasetBundle, config: RunConfig,
                   keep_params: bool = True) -> CVResult:
    """Stratified k-fold CV; reports mean and population std of accuracy."""
    from .graphs import stratified_kfold

    config.validate()
    splits = stratified_kfold(bundle, config.folds, config.seed)
    if config.workers > 1:
        tasks = [(bundle, split, config, k, keep_params) for k, split in enumerate(splits)]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_fold_task, tasks))
    else:
        anchors = prepare_anchors(bundle, config.anchor_mode, config.seed)
        results = [train_fold(bundle, split, config, config.seed, k, anchors, keep_params)
                   for k, split in enumerate(splits)]
    accs = np.array([r.accuracy for r in results])
    return CVResult(results, float(accs.mean()), float(accs.std()), splits)


@dataclass
class AblationResult:
    rows: list[tuple[str, float, float]]  # (anchor_mode, mean, std)
    louvain: CVResult
    random: CVResult


def ablation_anchor_selection(bundle: DatasetBundle, config: RunConfig) -> AblationResult:
    """Louvain vs. size-matched random anchors under identical fold splits."""
    from dataclasses import replace

    louvain_cv = cross_validate(bundle, replace(config, anchor_mode="louvain"), keep_params=False)
    random_cv = cross_validate(bundle, replace(config, anchor_mode="random"), keep_params=False)
    if splits_digest(louvain_cv.splits) != splits_digest(random_cv.splits):
        raise ConfigError("ablation arms saw different fold splits")
    rows = [("louvain", louvain_cv.mean, louvain_cv.std),
            ("random", random_cv.mean, random_cv.std)]
    return AblationResult(rows, louvain_cv, random_cv)


# --- result files ------------------------------------------------------------


def write_results_csv(path, result: CVResult) -> None:
    """Deterministic results file: per-fold accuracies plus mean/std rows.
    Wall times go to a separate file so this one is byte-stable."""
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "accuracy"])
        for r in result.folds:
            w.writerow([r.fold, f"{r.accuracy:.10f}"])
        w.writerow(["mean", f"{result.mean:.10f}"])
        w.writerow(["std", f"{result.std:.10f}"])


def write_timings_csv(path, result: CVResult) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "seconds"])
        for r in result.folds:
            w.writerow([r.fold, f"{r.seconds:.3f}"])


def write_ablation_csv(path, result: AblationResult) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor_mode", "mean", "std"])
        for mode, mean, std in result.rows:
            w.writerow([mode, f"{mean:.10f}", f"{std:.10f}"])
