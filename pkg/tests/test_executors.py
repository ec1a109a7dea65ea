"""Full-sequence executors: chunking, equivalence, traces, determinism."""

from dataclasses import replace

import numpy as np
import pytest

from armt import (MemoryState, ModelConfig, init_weights, relative_error,
                  run_diagonal, run_sequential)
from armt.errors import DimensionError, InputError
from armt.executors import segment_input
from armt.layers import embed_segment, layer_forward, prepare_weights, unembed
from armt.memory import assoc_retrieve, assoc_update
from armt.scheduler import validate_schedule
from armt.tensor_ops import WorkerPool

from conftest import damped, token_stream


# =========================================================================
# Input chunking
# =========================================================================

def test_segment_input_exact_and_padded(small_config):
    seg = small_config.segment_size
    exact, n = segment_input(np.arange(2 * seg), small_config)
    assert n == 2 * seg and len(exact) == 2

    padded, n = segment_input(np.arange(seg + 1), small_config)
    assert n == seg + 1 and len(padded) == 2
    assert padded[1].tolist() == [seg] + [0] * (seg - 1)


@pytest.mark.parametrize("tokens", [
    [], np.zeros((2, 3), np.int64), [0, 1, 999], [0, -1],
])
def test_segment_input_rejects_bad_streams(small_config, tokens):
    with pytest.raises(InputError):
        segment_input(tokens, small_config)


# =========================================================================
# Equivalence of the two schedules
# =========================================================================

@pytest.mark.parametrize("dtype", ["f32", "f64"])
@pytest.mark.parametrize("n_segments", [1, 2, 3, 5])
def test_schedules_agree_bitwise(small_config, small_weights, dtype,
                                 n_segments):
    tokens = token_stream(small_config, n_segments, seed=n_segments)
    base, _ = run_sequential(small_weights, small_config, tokens, dtype=dtype)
    diag, _ = run_diagonal(small_weights, small_config, tokens, dtype=dtype)
    assert np.array_equal(base, diag)
    assert np.isfinite(base).all()


def test_sequential_matches_single_op_composition(small_config, small_weights):
    # The executor is nothing but the public single-member ops in a loop.
    tokens = token_stream(small_config, 3, seed=40)
    got, _ = run_sequential(small_weights, small_config, tokens)

    prepared = prepare_weights(small_weights, "f64")
    state = MemoryState.fresh(small_config)
    segments, n = segment_input(tokens, small_config)
    rows = []
    for s, seg in enumerate(segments):
        act = embed_segment(prepared, seg, segment_index=s)
        for l in range(small_config.n_layers):
            act = assoc_retrieve(state, l, act, prepared)
            act = layer_forward(prepared, l, act)
            assoc_update(state, l, act.mem_part, prepared)
        rows.append(unembed(prepared, act))
    want = np.concatenate(rows)[:n]
    assert np.array_equal(got, want)


def test_rerun_is_deterministic(small_config, small_weights):
    tokens = token_stream(small_config, 2, seed=41)
    a, _ = run_diagonal(small_weights, small_config, tokens)
    b, _ = run_diagonal(small_weights, small_config, tokens)
    assert np.array_equal(a, b)


def test_final_memory_state_agrees(small_config, small_weights):
    tokens = token_stream(small_config, 4, seed=42)
    seq_state = MemoryState.fresh(small_config)
    diag_state = MemoryState.fresh(small_config)
    run_sequential(small_weights, small_config, tokens, state=seq_state)
    run_diagonal(small_weights, small_config, tokens, state=diag_state)
    assert np.array_equal(seq_state.A, diag_state.A)
    assert np.array_equal(seq_state.z, diag_state.z)
    assert np.array_equal(seq_state.updates, diag_state.updates)
    # Every layer absorbed every segment exactly once.
    assert seq_state.updates.tolist() == [4] * small_config.n_layers


def test_state_carries_across_calls(small_config, small_weights):
    # One 4-segment run == two 2-segment runs against the same state.
    tokens = token_stream(small_config, 4, seed=43)
    whole, _ = run_sequential(small_weights, small_config, tokens)

    state = MemoryState.fresh(small_config)
    half = len(tokens) // 2
    first, _ = run_sequential(small_weights, small_config, tokens[:half],
                              state=state)
    second, _ = run_sequential(small_weights, small_config, tokens[half:],
                               state=state)
    assert np.array_equal(whole, np.concatenate([first, second]))


def test_inert_memory_makes_segments_independent(small_config):
    # Zeroed write keys: phi(0) = 0, so gamma = 0 and nothing is ever
    # retrieved. Identical segments must then produce identical logits,
    # which also pins the per-segment restart of rotary positions.
    weights = init_weights(small_config)
    weights = replace(weights, w_k_mem=np.zeros_like(weights.w_k_mem))
    seg = token_stream(small_config, 1, seed=44)
    logits, _ = run_sequential(weights, small_config, np.tile(seg, 2))
    S = small_config.segment_size
    assert np.array_equal(logits[:S], logits[S:])


# =========================================================================
# Worker/permutation invariance (smoke; the full matrix is acceptance)
# =========================================================================

def test_threads_and_shuffle_do_not_change_logits(small_config, small_weights):
    tokens = token_stream(small_config, 5, seed=45)
    base, _ = run_diagonal(small_weights, small_config, tokens)
    threaded, _ = run_diagonal(small_weights, small_config, tokens, threads=4)
    shuffled, _ = run_diagonal(small_weights, small_config, tokens,
                               shuffle_seed=123)
    with WorkerPool(8, slabs=3) as pool:
        slabbed, _ = run_diagonal(small_weights, small_config, tokens,
                                  pool=pool)
    assert np.array_equal(base, threaded)
    assert np.array_equal(base, shuffled)
    assert np.array_equal(base, slabbed)


# =========================================================================
# Traces
# =========================================================================

def test_trace_step_counts(small_config, small_weights):
    S, L = 4, small_config.n_layers
    tokens = token_stream(small_config, S, seed=46)
    _, seq_trace = run_sequential(small_weights, small_config, tokens)
    _, diag_trace = run_diagonal(small_weights, small_config, tokens)
    assert seq_trace.steps_executed == S * L
    assert diag_trace.steps_executed == S + L - 1
    assert seq_trace.schedule_kind == "sequential"
    assert diag_trace.schedule_kind == "diagonal"


def test_diagonal_trace_is_valid_schedule(small_config, small_weights):
    S = 5
    tokens = token_stream(small_config, S, seed=47)
    _, trace = run_diagonal(small_weights, small_config, tokens)
    check = validate_schedule(trace.induced_schedule(), S,
                              small_config.n_layers)
    assert check.ok, check.violations
    for i, event in enumerate(trace.events):
        assert event.step == i
        assert all(n.segment + n.layer == i for n in event.nodes)
        assert len(event.worker_ids) == len(event.nodes)
        assert event.duration_ns >= 0


def test_sequential_trace_is_row_major(small_config, small_weights):
    S, L = 2, small_config.n_layers
    tokens = token_stream(small_config, S, seed=48)
    _, trace = run_sequential(small_weights, small_config, tokens)
    nodes = [ev.nodes[0] for ev in trace.events]
    assert [(n.segment, n.layer) for n in nodes] == [
        (s, l) for s in range(S) for l in range(L)]
    assert all(ev.worker_ids == [0] for ev in trace.events)
    assert validate_schedule(trace.induced_schedule(), S, L).ok


def test_trace_json_shape(small_config, small_weights):
    tokens = token_stream(small_config, 2, seed=49)
    _, trace = run_diagonal(small_weights, small_config, tokens)
    doc = trace.to_json_dict()
    assert doc["schedule_kind"] == "diagonal"
    assert doc["total_ns"] >= max(s["duration_ns"] for s in doc["steps"])
    assert [s["i"] for s in doc["steps"]] == list(range(len(doc["steps"])))
    assert all(len(pair) == 2 for s in doc["steps"] for pair in s["nodes"])


def test_degenerate_single_layer_grid():
    config = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=8,
                         segment_size=3, num_mem_tokens=1, d_mem=2,
                         vocab_size=9, seed=1)
    weights = damped(init_weights(config))
    tokens = token_stream(config, 3, seed=50)
    base, seq_trace = run_sequential(weights, config, tokens)
    diag, diag_trace = run_diagonal(weights, config, tokens)
    assert np.array_equal(base, diag)
    assert seq_trace.steps_executed == 3
    assert diag_trace.steps_executed == 3    # S + L - 1 with L = 1


# =========================================================================
# Run plumbing
# =========================================================================

def test_config_weights_structure_must_match(small_config, small_weights):
    other = replace(small_config, d_model=32, d_ff=64)
    with pytest.raises(InputError):
        run_sequential(small_weights, other, [0, 1, 2])


def test_run_config_governs_semantics(small_config, small_weights):
    # Same structure, different guard epsilon: the run must accept the
    # config override and honor it. An absurdly large eps guards every
    # normalizer update to zero, which is directly observable in state.
    tokens = token_stream(small_config, 2, seed=51)
    normal_state = MemoryState.fresh(small_config)
    run_sequential(small_weights, small_config, tokens, state=normal_state)
    assert np.any(normal_state.z != 0.0)

    override = replace(small_config, eps_assoc=1e30)
    guarded_state = MemoryState.fresh(small_config)
    run_sequential(small_weights, override, tokens, state=guarded_state)
    assert np.all(guarded_state.z == 0.0)
    assert np.any(guarded_state.A != 0.0)   # writes themselves still land


def test_state_dtype_must_match_run(small_config, small_weights):
    state = MemoryState.fresh(small_config, "f32")
    with pytest.raises(InputError):
        run_sequential(small_weights, small_config, [0, 1], state=state)


# =========================================================================
# Comparison metric
# =========================================================================

def test_relative_error_values():
    a = np.asarray([3.0, 4.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(a, np.zeros(2)) == float("inf")
    scaled = relative_error(1.01 * a, a)
    assert abs(scaled - 0.01) < 1e-12


def test_relative_error_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        relative_error(np.zeros(2), np.zeros(3))
