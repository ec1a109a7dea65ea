"""Transformer block, grouped over layers.

There is exactly one forward implementation: a stacked core that runs G
members at once, each against its own layer's weight slice. The
single-member path is the G=1 call of the same core, which is what makes
"grouped equals looped, bitwise" hold by construction: every reduction
happens along a trailing axis or inside the fixed-order GEMM kernel, so
a member's lane never mixes with its neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, ROPE_BASE, resolve_dtype
from .errors import DimensionError, InputError, SchedulingError
from .tensor_ops import GroupedBuffer, WorkerPool, gemm, grouped_gemm, rms_norm_stacked
from .weights import GroupedWeights, expected_shapes


# =========================================================================
# Activations
# =========================================================================

@dataclass
class SegmentActivation:
    """Activations for one in-flight segment: [tokens_part; mem_part].

    `data` is the contiguous concatenation, memory rows last;
    `layer_cursor` is the next layer this segment must pass.
    """

    data: np.ndarray
    n_token_rows: int
    segment_index: int
    layer_cursor: int = 0

    @property
    def tokens_part(self) -> np.ndarray:
        return self.data[:self.n_token_rows]

    @property
    def mem_part(self) -> np.ndarray:
        return self.data[self.n_token_rows:]


# =========================================================================
# Prepared (run-time) weights
# =========================================================================

@dataclass
class PreparedWeights:
    """Weights cast to the run precision plus derived caches.

    The associative projections are stored pre-transposed so every
    application is a plain x @ w. Rotary tables and the causal mask cover
    the full per-segment window (token rows then memory rows, positions
    restarting at 0 each segment).
    """

    config: ModelConfig
    dtype_name: str
    dtype: np.dtype
    eps_assoc: float
    embedding: np.ndarray
    mem_embedding: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    attn_gain: np.ndarray
    mlp_gain: np.ndarray
    wk_mem_t: np.ndarray      # (L, d_model, d_mem)
    wv_mem_t: np.ndarray      # (L, d_model, d_model)
    w_beta_t: np.ndarray      # (L, d_model, 1)
    wq_assoc_t: np.ndarray    # (L, d_model, d_mem)
    unembedding: np.ndarray
    rope_cos: np.ndarray      # (tokens_per_segment, d_head // 2)
    rope_sin: np.ndarray
    attn_mask: np.ndarray     # (tokens_per_segment,) x same, additive 0 / -inf


def prepare_weights(weights: GroupedWeights, dtype_name: str) -> PreparedWeights:
    dtype = resolve_dtype(dtype_name)
    config = weights.config
    for name, shape in expected_shapes(config).items():
        actual = weights.named_arrays()[name].shape
        if actual != shape:
            raise InputError(
                f"weight tensor {name!r} has shape {actual}, config expects {shape}")

    def cast(arr):
        return np.ascontiguousarray(arr, dtype=dtype)

    T = config.tokens_per_segment
    half = config.d_head // 2
    inv_freq = ROPE_BASE ** (-np.arange(0, config.d_head, 2, dtype=np.float64)
                             / config.d_head)
    angles = np.arange(T, dtype=np.float64)[:, None] * inv_freq[None, :]

    upper = np.triu(np.ones((T, T), dtype=bool), k=1)
    mask = np.where(upper, -np.inf, 0.0)

    return PreparedWeights(
        config=config,
        dtype_name=dtype_name,
        dtype=dtype,
        eps_assoc=config.effective_eps_assoc(dtype_name),
        embedding=cast(weights.embedding),
        mem_embedding=cast(weights.mem_embedding),
        wq=cast(weights.wq),
        wk=cast(weights.wk),
        wv=cast(weights.wv),
        wo=cast(weights.wo),
        w_gate=cast(weights.w_gate),
        w_in=cast(weights.w_in),
        w_out=cast(weights.w_out),
        attn_gain=cast(weights.attn_gain),
        mlp_gain=cast(weights.mlp_gain),
        wk_mem_t=cast(weights.w_k_mem.transpose(0, 2, 1)),
        wv_mem_t=cast(weights.w_v_mem.transpose(0, 2, 1)),
        w_beta_t=cast(weights.w_beta.transpose(0, 2, 1)),
        wq_assoc_t=cast(weights.w_q_assoc.transpose(0, 2, 1)),
        unembedding=cast(weights.unembedding),
        rope_cos=cast(np.cos(angles)[:, :half]),
        rope_sin=cast(np.sin(angles)[:, :half]),
        attn_mask=cast(mask),
    )


def gather_layers(stacked: np.ndarray, layers: np.ndarray) -> np.ndarray:
    """Per-member weight slices; zero-copy when layers are consecutive."""
    lo = int(layers[0])
    if np.array_equal(layers, np.arange(lo, lo + len(layers))):
        return stacked[lo:lo + len(layers)]
    return stacked[layers]


# =========================================================================
# Elementwise math (lane-independent by construction)
# =========================================================================

def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic; saturates to exactly 0/1 when exp rounds."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    m = np.max(scores, axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (G, H, T, d_head); tables broadcast over (G, H).
    half = cos.shape[1]
    x1, x2 = x[..., :half], x[..., half:]
    out = np.empty_like(x)
    out[..., :half] = x1 * cos - x2 * sin
    out[..., half:] = x2 * cos + x1 * sin
    return out


# =========================================================================
# Stacked forward core
# =========================================================================

def _project(x: np.ndarray, w: np.ndarray, pool: WorkerPool | None) -> np.ndarray:
    """x (G,T,din) @ w (G,din,dout) through the grouped kernel."""
    G, T, _ = x.shape
    out = GroupedBuffer(G, (T, w.shape[2]), x.dtype)
    grouped_gemm(x, w, out, pool)
    return out.array


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    G, T, dm = x.shape
    dh = dm // n_heads
    return np.ascontiguousarray(x.reshape(G, T, n_heads, dh).transpose(0, 2, 1, 3))


def _attention_stack(prepared: PreparedWeights, layers: np.ndarray,
                     x: np.ndarray, pool: WorkerPool | None) -> np.ndarray:
    cfg = prepared.config
    G, T, dm = x.shape
    H, dh = cfg.n_heads, cfg.d_head

    q = _project(x, gather_layers(prepared.wq, layers), pool)
    k = _project(x, gather_layers(prepared.wk, layers), pool)
    v = _project(x, gather_layers(prepared.wv, layers), pool)

    qh = _apply_rope(_split_heads(q, H), prepared.rope_cos, prepared.rope_sin)
    kh = _apply_rope(_split_heads(k, H), prepared.rope_cos, prepared.rope_sin)
    vh = _split_heads(v, H)

    qf = qh.reshape(G * H, T, dh)
    kf = kh.reshape(G * H, T, dh)
    vf = vh.reshape(G * H, T, dh)

    scores = GroupedBuffer(G * H, (T, T), x.dtype)
    grouped_gemm(qf, kf.transpose(0, 2, 1), scores, pool)
    # Python-float scale: a numpy f64 scalar would silently promote f32 scores.
    probs = _softmax_rows(scores.array * (1.0 / math.sqrt(dh)) + prepared.attn_mask)

    ctx = GroupedBuffer(G * H, (T, dh), x.dtype)
    grouped_gemm(probs, vf, ctx, pool)
    merged = np.ascontiguousarray(
        ctx.array.reshape(G, H, T, dh).transpose(0, 2, 1, 3)).reshape(G, T, dm)

    return _project(merged, gather_layers(prepared.wo, layers), pool)


def _mlp_stack(prepared: PreparedWeights, layers: np.ndarray,
               x: np.ndarray, pool: WorkerPool | None) -> np.ndarray:
    gate = _project(x, gather_layers(prepared.w_gate, layers), pool)
    up = _project(x, gather_layers(prepared.w_in, layers), pool)
    return _project(_silu(gate) * up, gather_layers(prepared.w_out, layers), pool)


def forward_stack(prepared: PreparedWeights, layers: np.ndarray,
                  x: np.ndarray, pool: WorkerPool | None = None) -> np.ndarray:
    """Pre-norm block for G members at once: x (G, T, d_model), layers (G,).

    Member g runs against layer layers[g]'s weight slice. Lane g of the
    result is bitwise the G=1 call on that member alone.
    """
    eps = prepared.config.eps_norm
    h = rms_norm_stacked(x, gather_layers(prepared.attn_gain, layers), eps)
    x = x + _attention_stack(prepared, layers, h, pool)
    h = rms_norm_stacked(x, gather_layers(prepared.mlp_gain, layers), eps)
    return x + _mlp_stack(prepared, layers, h, pool)


# =========================================================================
# Public layer ops
# =========================================================================

def _check_members(prepared: PreparedWeights,
                   members: list[tuple[int, SegmentActivation]]) -> np.ndarray:
    if not members:
        raise SchedulingError("grouped forward needs at least one member")
    L = prepared.config.n_layers
    if len(members) > L:
        raise SchedulingError(f"group of {len(members)} exceeds layer count {L}")
    layers = []
    for l, act in members:
        if not 0 <= l < L:
            raise SchedulingError(f"layer index {l} out of range 0..{L - 1}")
        if act.layer_cursor != l:
            raise SchedulingError(
                f"segment {act.segment_index} is at layer {act.layer_cursor}, "
                f"not {l}")
        if act.data.shape != (prepared.config.tokens_per_segment, prepared.config.d_model):
            raise DimensionError(
                f"segment {act.segment_index} activation has shape {act.data.shape}")
        if act.data.dtype != prepared.dtype:
            raise DimensionError(
                f"activation dtype {act.data.dtype} does not match run dtype "
                f"{prepared.dtype}")
        layers.append(l)
    if len(set(layers)) != len(layers):
        raise SchedulingError(f"duplicate layer index in group: {sorted(layers)}")
    return np.asarray(layers, dtype=np.int64)


def grouped_layer_forward(prepared: PreparedWeights,
                          members: list[tuple[int, SegmentActivation]],
                          pool: WorkerPool | None = None) -> list[SegmentActivation]:
    """Advance each (layer, activation) member one layer, all in one batch."""
    layers = _check_members(prepared, members)
    x = np.stack([act.data for _, act in members])
    y = forward_stack(prepared, layers, x, pool)
    return [
        SegmentActivation(data=y[g], n_token_rows=act.n_token_rows,
                          segment_index=act.segment_index, layer_cursor=l + 1)
        for g, (l, act) in enumerate(members)
    ]


def layer_forward(prepared: PreparedWeights, layer: int,
                  activation: SegmentActivation,
                  pool: WorkerPool | None = None) -> SegmentActivation:
    """Single-member forward: the degenerate group of one."""
    return grouped_layer_forward(prepared, [(layer, activation)], pool)[0]


# =========================================================================
# Embedding boundary
# =========================================================================

def embed_segment(prepared: PreparedWeights, token_ids: np.ndarray,
                  segment_index: int) -> SegmentActivation:
    """Token rows looked up from the embedding, memory rows appended after."""
    ids = np.asarray(token_ids)
    cfg = prepared.config
    if ids.ndim != 1 or ids.shape[0] != cfg.segment_size:
        raise InputError(
            f"segment must hold exactly {cfg.segment_size} token ids, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise InputError(f"token ids must lie in [0, {cfg.vocab_size})")
    data = np.concatenate([prepared.embedding[ids], prepared.mem_embedding])
    return SegmentActivation(data=data, n_token_rows=cfg.segment_size,
                             segment_index=segment_index, layer_cursor=0)


def unembed(prepared: PreparedWeights, activation: SegmentActivation) -> np.ndarray:
    """Logits for the token rows (memory rows carry no output)."""
    return gemm(np.ascontiguousarray(activation.tokens_part), prepared.unembedding)
