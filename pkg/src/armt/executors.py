"""Full-sequence execution under the two schedules.

run_sequential walks segments outermost and layers innermost, one node at
a time. run_diagonal keeps a wavefront of in-flight segments and advances
the whole anti-diagonal in one grouped step, S + L - 1 steps total. Both
drive the identical stacked cores (the sequential path is the G=1 lane),
so their logits agree bitwise in every precision; no tolerance is doing
any work there.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, InputError
from .layers import (PreparedWeights, SegmentActivation, embed_segment,
                     forward_stack, prepare_weights, unembed)
from .memory import MemoryState, retrieve_stack, update_stack
from .scheduler import Node
from .tensor_ops import WorkerPool
from .weights import GroupedWeights, expected_shapes


# =========================================================================
# Traces
# =========================================================================

@dataclass
class TraceEvent:
    step: int
    nodes: list[Node]
    worker_ids: list[int]
    duration_ns: int


@dataclass
class ExecutionTrace:
    """What ran when: one event per schedule step, nodes in execution order."""

    schedule_kind: str
    events: list[TraceEvent] = field(default_factory=list)
    total_ns: int = 0

    @property
    def steps_executed(self) -> int:
        return len(self.events)

    def induced_schedule(self) -> list[list[Node]]:
        return [ev.nodes for ev in self.events]

    def to_json_dict(self) -> dict:
        return {
            "schedule_kind": self.schedule_kind,
            "steps": [
                {
                    "i": ev.step,
                    "nodes": [[n.segment, n.layer] for n in ev.nodes],
                    "duration_ns": ev.duration_ns,
                }
                for ev in self.events
            ],
            "total_ns": self.total_ns,
        }


# =========================================================================
# Input chunking
# =========================================================================

def segment_input(tokens, config: ModelConfig) -> tuple[list[np.ndarray], int]:
    """Split a token stream into fixed-size segments, zero-padding the tail.

    Returns (segments, original length); logits are truncated back to the
    original length on output.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1:
        raise InputError(f"token stream must be one-dimensional, got shape {ids.shape}")
    n = int(ids.shape[0])
    if n == 0:
        raise InputError("token stream is empty")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise InputError(f"token ids must lie in [0, {config.vocab_size})")
    seg = config.segment_size
    pad = (-n) % seg
    if pad:
        ids = np.concatenate([ids, np.zeros(pad, np.int64)])
    return list(ids.reshape(-1, seg)), n


# =========================================================================
# Shared run plumbing
# =========================================================================

def _prepare_run(weights: GroupedWeights, config: ModelConfig, tokens,
                 dtype: str, state: MemoryState | None):
    if expected_shapes(config) != expected_shapes(weights.config):
        raise InputError("config does not match the loaded weights' structure")
    if config is not weights.config:
        # The run's config governs semantics (eps, feature order); the
        # structural check above guarantees the tensors still fit it.
        weights = replace(weights, config=config)
    prepared = prepare_weights(weights, dtype)
    segments, n_tokens = segment_input(tokens, config)
    if state is None:
        state = MemoryState.fresh(config, dtype)
    state.check_compatible(prepared)
    return prepared, segments, n_tokens, state


def _emit_logits(rows: list[np.ndarray], n_tokens: int) -> np.ndarray:
    return np.concatenate(rows)[:n_tokens]


# =========================================================================
# Executors
# =========================================================================

def run_sequential(weights: GroupedWeights, config: ModelConfig, tokens, *,
                   dtype: str = "f64",
                   state: MemoryState | None = None) -> tuple[np.ndarray, ExecutionTrace]:
    """Baseline: segments outermost, layers innermost, one node per step."""
    prepared, segments, n_tokens, state = _prepare_run(
        weights, config, tokens, dtype, state)
    L = config.n_layers
    trace = ExecutionTrace(schedule_kind="sequential")
    logits_rows = []

    t_run = time.perf_counter_ns()
    for s, seg in enumerate(segments):
        act = embed_segment(prepared, seg, segment_index=s)
        for l in range(L):
            t0 = time.perf_counter_ns()
            layers = np.asarray([l], dtype=np.int64)
            x = retrieve_stack(state, layers, act.data[None], prepared)
            y = forward_stack(prepared, layers, x)
            update_stack(state, layers, y[:, -config.num_mem_tokens:, :], prepared)
            act = SegmentActivation(data=y[0], n_token_rows=act.n_token_rows,
                                    segment_index=s, layer_cursor=l + 1)
            trace.events.append(TraceEvent(
                step=len(trace.events), nodes=[Node(s, l)], worker_ids=[0],
                duration_ns=time.perf_counter_ns() - t0))
        logits_rows.append(unembed(prepared, act))
    trace.total_ns = time.perf_counter_ns() - t_run

    return _emit_logits(logits_rows, n_tokens), trace


def run_diagonal(weights: GroupedWeights, config: ModelConfig, tokens, *,
                 dtype: str = "f64",
                 threads: int = 1,
                 pool: WorkerPool | None = None,
                 state: MemoryState | None = None,
                 shuffle_seed: int | None = None) -> tuple[np.ndarray, ExecutionTrace]:
    """Wavefront execution: each step advances every in-flight segment.

    A new segment joins the front of the wavefront each step while
    segments remain; a segment that has cleared all L layers is popped
    and unembedded. Steps run the whole group through one stacked
    retrieve / forward / update, S + L - 1 steps in total.

    `shuffle_seed` randomizes the within-step member order (a determinism
    audit hook: results must not change). `pool` overrides the worker
    pool built from `threads`.
    """
    prepared, segments, n_tokens, state = _prepare_run(
        weights, config, tokens, dtype, state)
    L, M = config.n_layers, config.num_mem_tokens
    n_segments = len(segments)
    shuffle_rng = None if shuffle_seed is None else np.random.default_rng(shuffle_seed)

    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(threads)
    trace = ExecutionTrace(schedule_kind="diagonal")
    logits_rows: list[np.ndarray | None] = [None] * n_segments
    in_flight: list[SegmentActivation] = []
    next_segment = 0

    try:
        t_run = time.perf_counter_ns()
        while next_segment < n_segments or in_flight:
            t0 = time.perf_counter_ns()
            if next_segment < n_segments:
                in_flight.insert(0, embed_segment(
                    prepared, segments[next_segment], segment_index=next_segment))
                next_segment += 1
            if shuffle_rng is not None and len(in_flight) > 1:
                order = shuffle_rng.permutation(len(in_flight))
                in_flight = [in_flight[g] for g in order]

            G = len(in_flight)
            layers = np.asarray([m.layer_cursor for m in in_flight], dtype=np.int64)
            nodes = [Node(m.segment_index, m.layer_cursor) for m in in_flight]

            x = np.stack([m.data for m in in_flight])
            x = retrieve_stack(state, layers, x, prepared, pool)
            y = forward_stack(prepared, layers, x, pool)
            update_stack(state, layers, y[:, -M:, :], prepared, pool)

            still_flying = []
            for g, member in enumerate(in_flight):
                advanced = SegmentActivation(
                    data=y[g], n_token_rows=member.n_token_rows,
                    segment_index=member.segment_index,
                    layer_cursor=member.layer_cursor + 1)
                if advanced.layer_cursor == L:
                    logits_rows[advanced.segment_index] = unembed(prepared, advanced)
                else:
                    still_flying.append(advanced)
            in_flight = still_flying

            trace.events.append(TraceEvent(
                step=len(trace.events), nodes=nodes,
                worker_ids=pool.slab_assignment(G),
                duration_ns=time.perf_counter_ns() - t0))
        trace.total_ns = time.perf_counter_ns() - t_run
    finally:
        if own_pool:
            pool.close()

    return _emit_logits(logits_rows, n_tokens), trace


# =========================================================================
# Comparison metric
# =========================================================================

def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Relative Frobenius error ||a - b|| / ||b||, b being the baseline.

    Computed in f64 regardless of input precision (it is a report metric,
    not part of the bitwise chain). Both-zero compares equal: 0.
    """
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    a64 = np.asarray(a, np.float64)
    b64 = np.asarray(b, np.float64)
    base = float(np.linalg.norm(b64))
    diff = float(np.linalg.norm(a64 - b64))
    if base == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / base
