"""Per-layer associative memory with delta-rule writes.

Each layer owns a fast-weight pair (A, z). Retrieval for a query q is
A phi(q) / (z . phi(q)) added residually to the input, with the quotient
guarded to zero whenever its denominator magnitude is at or below
eps_assoc; a fresh (all-zero) state therefore acts as the identity and
needs no special case anywhere. Writes fold memory tokens one at a time,
so storing under an existing key overwrites the old value (token i sees
the updates of tokens before it).

The fold runs in one compiled kernel with fixed accumulation order; the
stacked retrieve/update used by diagonal execution reuses the exact same
kernels per member lane, which keeps grouped and sequential execution
bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import ModelConfig, resolve_dtype
from .errors import DimensionError, InputError
from .layers import PreparedWeights, SegmentActivation, gather_layers, sigmoid
from .tensor_ops import GroupedBuffer, WorkerPool, grouped_gemm


# =========================================================================
# Feature map
# =========================================================================

def dpfp(x: np.ndarray, nu: int) -> np.ndarray:
    """Deterministic nonnegative feature map, dim d -> 2*nu*d.

    r = [relu(x); relu(-x)], then nu blocks of r * rotate(r, j) where
    rotate shifts indices forward by j modulo 2d. Total function: no
    parameters, no failure modes, total nonnegativity.
    """
    if nu < 1:
        raise InputError(f"dpfp order must be >= 1, got {nu}")
    r = np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0)], axis=-1)
    blocks = [r * np.roll(r, -j, axis=-1) for j in range(1, nu + 1)]
    return np.concatenate(blocks, axis=-1)


# =========================================================================
# State
# =========================================================================

@dataclass
class MemoryState:
    """Stacked per-layer fast weights: A (L, d_model, d_phi), z (L, d_phi).

    updates[l] counts completed layer-l segment writes; it is what makes
    "has this layer seen anything yet" a cheap observable fact.
    """

    A: np.ndarray
    z: np.ndarray
    updates: np.ndarray

    @classmethod
    def fresh(cls, config: ModelConfig, dtype="f64") -> "MemoryState":
        dt = resolve_dtype(dtype) if isinstance(dtype, str) else np.dtype(dtype)
        L = config.n_layers
        return cls(
            A=np.zeros((L, config.d_model, config.d_phi), dt),
            z=np.zeros((L, config.d_phi), dt),
            updates=np.zeros(L, np.int64),
        )

    def clone(self) -> "MemoryState":
        return MemoryState(self.A.copy(), self.z.copy(), self.updates.copy())

    def check_compatible(self, prepared: PreparedWeights) -> None:
        cfg = prepared.config
        want_A = (cfg.n_layers, cfg.d_model, cfg.d_phi)
        if self.A.shape != want_A or self.z.shape != want_A[::2]:
            raise InputError(
                f"memory state shaped {self.A.shape}/{self.z.shape}, "
                f"config expects {want_A}/{want_A[::2]}")
        if self.A.dtype != prepared.dtype:
            raise InputError(
                f"memory state dtype {self.A.dtype} does not match run dtype "
                f"{prepared.dtype}")


# =========================================================================
# Delta-rule fold kernel
# =========================================================================

@njit(cache=True, nogil=True, fastmath=False)
def _delta_fold(A, z, phik, v, beta, eps, vbar):
    # A (dm, dphi), z (dphi,), phik (M, dphi), v (M, dm), beta (M,),
    # vbar: (dm,) scratch. Folds tokens in index order; token i reads the
    # state already updated by tokens < i, which defines overwrite.
    M, dphi = phik.shape
    dm = A.shape[0]
    for i in range(M):
        zq = z[0] * phik[i, 0]
        nrm = phik[i, 0] * phik[i, 0]
        for t in range(1, dphi):
            zq += z[t] * phik[i, t]
            nrm += phik[i, t] * phik[i, t]
        if abs(zq) <= eps:
            for j in range(dm):
                vbar[j] = 0.0
        else:
            for j in range(dm):
                acc = A[j, 0] * phik[i, 0]
                for t in range(1, dphi):
                    acc += A[j, t] * phik[i, t]
                vbar[j] = acc / zq
        if nrm <= eps:
            gamma = 0.0
        else:
            gamma = 1.0 - zq / nrm
        for j in range(dm):
            coef = beta[i] * (v[i, j] - vbar[j])
            for t in range(dphi):
                A[j, t] += coef * phik[i, t]
        for t in range(dphi):
            z[t] += gamma * phik[i, t]


# =========================================================================
# Stacked cores (single ops are the G=1 case)
# =========================================================================

def retrieve_stack(state: MemoryState, layers: np.ndarray, x: np.ndarray,
                   prepared: PreparedWeights,
                   pool: WorkerPool | None = None) -> np.ndarray:
    """x + guarded associative readout, per member lane. Read-only on state."""
    G, T, dm = x.shape
    q = GroupedBuffer(G, (T, prepared.config.d_mem), x.dtype)
    grouped_gemm(x, gather_layers(prepared.wq_assoc_t, layers), q, pool)
    phi = dpfp(q.array, prepared.config.dpfp_nu)

    a_sel = gather_layers(state.A, layers)
    numer = GroupedBuffer(G, (T, dm), x.dtype)
    grouped_gemm(phi, a_sel.transpose(0, 2, 1), numer, pool)

    z_sel = gather_layers(state.z, layers)
    denom = GroupedBuffer(G, (T, 1), x.dtype)
    grouped_gemm(phi, z_sel[:, :, None], denom, pool)

    guarded = np.abs(denom.array) <= prepared.eps_assoc
    safe = np.where(guarded, 1.0, denom.array)
    term = np.where(guarded, 0.0, numer.array / safe)
    return x + term


def update_stack(state: MemoryState, layers: np.ndarray, mem_out: np.ndarray,
                 prepared: PreparedWeights,
                 pool: WorkerPool | None = None) -> None:
    """Fold each member's memory-token outputs into its layer slot.

    mem_out: (G, num_mem_tokens, d_model). Projections are batched; the
    folds themselves run per member because each mutates one layer's
    (A, z) slot. Members hold distinct layers, so order cannot matter.
    """
    cfg = prepared.config
    G, M, dm = mem_out.shape
    k = GroupedBuffer(G, (M, cfg.d_mem), mem_out.dtype)
    grouped_gemm(mem_out, gather_layers(prepared.wk_mem_t, layers), k, pool)
    v = GroupedBuffer(G, (M, dm), mem_out.dtype)
    grouped_gemm(mem_out, gather_layers(prepared.wv_mem_t, layers), v, pool)
    b = GroupedBuffer(G, (M, 1), mem_out.dtype)
    grouped_gemm(mem_out, gather_layers(prepared.w_beta_t, layers), b, pool)
    beta = sigmoid(b.array[:, :, 0])
    phi = dpfp(k.array, cfg.dpfp_nu)

    vbar = np.empty(dm, mem_out.dtype)
    for g in range(G):
        l = int(layers[g])
        _delta_fold(state.A[l], state.z[l], phi[g], v.array[g], beta[g],
                    prepared.eps_assoc, vbar)
        state.updates[l] += 1


# =========================================================================
# Public single-member ops
# =========================================================================

def _one_layer(layer: int, n_layers: int) -> np.ndarray:
    if not 0 <= layer < n_layers:
        raise InputError(f"layer index {layer} out of range 0..{n_layers - 1}")
    return np.asarray([layer], dtype=np.int64)


def assoc_retrieve(state: MemoryState, layer: int,
                   activation: SegmentActivation,
                   prepared: PreparedWeights) -> SegmentActivation:
    """Associative readout over every position of one segment (residual)."""
    state.check_compatible(prepared)
    layers = _one_layer(layer, prepared.config.n_layers)
    y = retrieve_stack(state, layers, activation.data[None], prepared)
    return SegmentActivation(data=y[0], n_token_rows=activation.n_token_rows,
                             segment_index=activation.segment_index,
                             layer_cursor=activation.layer_cursor)


def assoc_update(state: MemoryState, layer: int, mem_out: np.ndarray,
                 prepared: PreparedWeights) -> None:
    """Delta-rule write of one segment's memory-token outputs into layer l."""
    state.check_compatible(prepared)
    cfg = prepared.config
    if mem_out.ndim != 2 or mem_out.shape != (cfg.num_mem_tokens, cfg.d_model):
        raise DimensionError(
            f"memory-token outputs must be {(cfg.num_mem_tokens, cfg.d_model)}, "
            f"got {mem_out.shape}")
    layers = _one_layer(layer, cfg.n_layers)
    update_stack(state, layers, np.ascontiguousarray(mem_out)[None], prepared)
