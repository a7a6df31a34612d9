"""Wall-time scaling of anchor-mode vs. full node-to-node attention.

Only the transformer stage is timed (eval mode, forward only): the timer
brackets exactly the attention call, never graph generation, feature
init, or parameter setup. Reported time is the median of >= 3 reps after
one warm-up, with the median absolute deviation as spread.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .anchors import assignment_matrix, louvain, random_partition
from .autodiff import Tensor
from .errors import ConfigError
from .model import ModelParams, _add_attention_block, anchor_features, attention_block
from .graphs import synth_random_graph

log = logging.getLogger(__name__)


@dataclass
class TimingRecord:
    mode: str  # "anchor" | "full"
    n: int
    c: int
    dim: int
    reps: int
    median_seconds: float
    mad_seconds: float


def _block_params(prefixes: Sequence[str], dim: int, ffn_hidden: int, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors: dict = {}
    for prefix in prefixes:
        _add_attention_block(tensors, prefix, dim, ffn_hidden, rng)
    return ModelParams(tensors)


def graph_digest(n: int, edge_rate: float, seed: int) -> str:
    g = synth_random_graph(n, edge_rate, seed)
    return hashlib.sha256(g.edge_array().tobytes()).hexdigest()[:16]


def time_attention(mode: str, n: int, c: int, dim: int, reps: int, seed: int,
                   edge_rate: float = 0.01, anchor_source: str = "fixed",
                   ffn_hidden: Optional[int] = None) -> TimingRecord:
    """Median forward wall time of one transformer stage on a synthetic graph.

    anchor mode: community means + anchor self-attention + node-to-anchor
    cross-attention with the given anchor count; full mode: one N x N
    self-attention block. `anchor_source="louvain"` derives c from Louvain
    on the generated graph instead of the fixed count.
    """
    if mode not in ("anchor", "full"):
        raise ConfigError(f"unknown timing mode {mode!r}")
    if reps < 3:
        raise ConfigError(f"need at least 3 reps, got {reps}")
    if not 1 <= c <= n:
        raise ConfigError(f"need 1 <= c <= n, got c={c}, n={n}")
    ffn = ffn_hidden or 2 * dim
    g = synth_random_graph(n, edge_rate, seed)
    feat_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    h = Tensor(feat_rng.standard_normal((n, dim)))
    eval_rng = np.random.default_rng(0)  # dropout off in eval; never consumed

    if mode == "anchor":
        if anchor_source == "louvain":
            part = louvain(g)
            c = part.num_communities
        else:
            part = random_partition(n, c, seed=int(np.random.SeedSequence([seed, 2]).generate_state(1)[0]))
        assign = assignment_matrix(part)
        assign.mean_matrix()  # build outside the timed region
        params = _block_params(("aasa", "anca"), dim, ffn, seed)

        def run():
            p = anchor_features(assign, h)
            p = attention_block(p, p, params, "aasa", 0.0, 1e-5, eval_rng, training=False)
            return attention_block(h, p, params, "anca", 0.0, 1e-5, eval_rng, training=False)
    else:
        params = _block_params(("full",), dim, ffn, seed)

        def run():
            return attention_block(h, h, params, "full", 0.0, 1e-5, eval_rng, training=False)

    out = run()  # warm-up
    if out.shape != (n, dim):
        raise ConfigError(f"unexpected output shape {out.shape}")
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    med = float(np.median(times))
    mad = float(np.median(np.abs(times - med)))
    return TimingRecord(mode, n, c, dim, reps, med, mad)


def scaling_sweep(sizes: Sequence[int], c: int, dim: int, reps: int, seed: int,
                  edge_rate: float = 0.01, anchor_source: str = "fixed") -> list[TimingRecord]:
    """Both modes per size, sizes ascending."""
    if list(sizes) != sorted(sizes):
        raise ConfigError("sizes must be ascending")
    records = []
    for n in sizes:
        log.info("bench n=%d graph_sha=%s", n, graph_digest(n, edge_rate, seed))
        for mode in ("anchor", "full"):
            records.append(time_attention(mode, n, c, dim, reps, seed,
                                          edge_rate=edge_rate, anchor_source=anchor_source))
    return records


def fit_loglog_slope(series: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of log(seconds) against log(n)."""
    if len(series) < 3:
        raise ConfigError(f"need at least 3 points, got {len(series)}")
    ns = np.array([p[0] for p in series], dtype=np.float64)
    ts = np.array([p[1] for p in series], dtype=np.float64)
    if np.any(ns <= 0) or np.any(ts <= 0):
        raise ConfigError("log-log fit needs strictly positive values")
    slope, _ = np.polyfit(np.log(ns), np.log(ts), 1)
    return float(slope)


def write_timing_csv(path, records: Sequence[TimingRecord]) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "n", "c", "median_ms", "mad_ms"])
        for r in records:
            w.writerow([r.mode, r.n, r.c, f"{r.median_seconds * 1e3:.3f}", f"{r.mad_seconds * 1e3:.3f}"])
