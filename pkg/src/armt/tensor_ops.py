"""Deterministic tensor primitives.

All matrix products in the engine go through two compiled kernels whose
k-reduction runs strictly left to right per output element. That single
choice is what makes every higher-level guarantee cheap: the same inputs
produce bitwise-identical outputs no matter how members of a group are
batched, permuted, or split across worker threads, because each member's
arithmetic never depends on its neighbours.

Storage is plain numpy; only the inner GEMM loops are compiled (numba,
``nogil`` so slabs can overlap on multicore hosts).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from .errors import DimensionError, InputError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


# =========================================================================
# Compiled kernels
# =========================================================================

@njit(cache=True, nogil=True, fastmath=False)
def _bgemm_nn(a, b, out):
    # out[g] = a[g] @ b[g] for a (G,m,k), b (G,k,n).
    # t ascends for every out element: fixed left-to-right reduction.
    G, m, k = a.shape
    n = b.shape[2]
    for g in range(G):
        for i in range(m):
            av = a[g, i, 0]
            for j in range(n):
                out[g, i, j] = av * b[g, 0, j]
            for t in range(1, k):
                av = a[g, i, t]
                for j in range(n):
                    out[g, i, j] += av * b[g, t, j]


@njit(cache=True, nogil=True, fastmath=False)
def _bgemm_nt(a, b, out):
    # out[g] = a[g] @ b[g].T for a (G,m,k), b (G,n,k); same reduction order.
    G, m, k = a.shape
    n = b.shape[1]
    for g in range(G):
        for i in range(m):
            for j in range(n):
                acc = a[g, i, 0] * b[g, j, 0]
                for t in range(1, k):
                    acc += a[g, i, t] * b[g, j, t]
                out[g, i, j] = acc


def warmup_kernels(dtype=np.float64) -> None:
    """Force kernel compilation for one dtype (keeps benchmarks honest)."""
    a = np.ones((1, 2, 2), dtype=dtype)
    out = np.empty((1, 2, 2), dtype=dtype)
    _bgemm_nn(a, a, out)
    _bgemm_nt(a, a, out)


# =========================================================================
# Worker pool: slab dispatch over group-stacked arrays
# =========================================================================

class WorkerPool:
    """Runs group-stacked kernels, optionally split across threads.

    Work splits into contiguous slabs of whole members along axis 0. A slab
    never splits a member, and per-member arithmetic inside the kernels has
    a fixed order, so results are bitwise identical for every worker count.

    Worker threads beyond the host's cores cannot add throughput, only
    dispatch overhead, so the effective slab count is capped at
    ``os.cpu_count()``. Pass ``slabs=`` to force a count (determinism tests
    use this to exercise real partitions on small hosts).
    """

    def __init__(self, threads: int = 1, *, slabs: int | None = None):
        if not isinstance(threads, int) or threads < 1:
            raise InputError(f"threads must be a positive int, got {threads!r}")
        if slabs is None:
            slabs = max(1, min(threads, os.cpu_count() or 1))
        elif not isinstance(slabs, int) or slabs < 1:
            raise InputError(f"slabs must be a positive int, got {slabs!r}")
        self.threads = threads
        self.slabs = slabs
        self._executor = ThreadPoolExecutor(max_workers=slabs) if slabs > 1 else None

    def slab_bounds(self, group_size: int) -> list[tuple[int, int]]:
        """Near-even contiguous partition of [0, group_size) into slabs."""
        k = min(self.slabs, group_size)
        base, rem = divmod(group_size, k)
        bounds, lo = [], 0
        for s in range(k):
            hi = lo + base + (1 if s < rem else 0)
            bounds.append((lo, hi))
            lo = hi
        return bounds

    def slab_assignment(self, group_size: int) -> list[int]:
        """Worker index handling each member, in member order."""
        owner = []
        for s, (lo, hi) in enumerate(self.slab_bounds(group_size)):
            owner.extend([s] * (hi - lo))
        return owner

    def run(self, kernel, group_size: int, *arrays) -> None:
        """Apply `kernel` to axis-0 slabs of `arrays` (in-place into them)."""
        bounds = self.slab_bounds(group_size)
        if len(bounds) == 1:
            kernel(*arrays)
            return
        futures = [
            self._executor.submit(kernel, *(arr[lo:hi] for arr in arrays))
            for lo, hi in bounds
        ]
        for fut in futures:
            fut.result()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


# =========================================================================
# Grouped storage
# =========================================================================

class GroupedBuffer:
    """One contiguous allocation holding same-shaped member tensors.

    ``member(g)`` is a zero-copy view into the backing array, which is the
    whole point: grouped kernels write straight into one block instead of
    scattering over per-member allocations.
    """

    def __init__(self, group_size: int, member_shape: tuple[int, ...],
                 dtype=np.float64):
        if group_size < 1:
            raise DimensionError(f"group_size must be >= 1, got {group_size}")
        member_shape = tuple(int(d) for d in member_shape)
        if any(d < 1 for d in member_shape):
            raise DimensionError(f"member_shape must be positive, got {member_shape}")
        dtype = np.dtype(dtype)
        if dtype not in _FLOAT_DTYPES:
            raise DimensionError(f"unsupported dtype {dtype}")
        self.array = np.empty((group_size, *member_shape), dtype)

    @classmethod
    def wrap(cls, array: np.ndarray) -> "GroupedBuffer":
        """Adopt an existing (G, ...) array as backing storage, no copy."""
        if array.ndim < 2:
            raise DimensionError("backing array needs a leading group axis")
        buf = cls.__new__(cls)
        buf.array = array
        return buf

    @property
    def group_size(self) -> int:
        return self.array.shape[0]

    @property
    def member_shape(self) -> tuple[int, ...]:
        return self.array.shape[1:]

    @property
    def dtype(self) -> np.dtype:
        return self.array.dtype

    def member(self, g: int) -> np.ndarray:
        if not 0 <= g < self.group_size:
            raise DimensionError(f"member index {g} out of range 0..{self.group_size - 1}")
        return self.array[g]


# =========================================================================
# Public ops
# =========================================================================

def _check_matrix(name: str, x: np.ndarray, ndim: int):
    if not isinstance(x, np.ndarray) or x.ndim != ndim:
        raise DimensionError(f"{name} must be a {ndim}-d ndarray")
    if x.dtype not in _FLOAT_DTYPES:
        raise DimensionError(f"{name} has unsupported dtype {x.dtype}")


def gemm(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Deterministic matrix product a @ b with fixed reduction order."""
    _check_matrix("a", a, 2)
    _check_matrix("b", b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dims disagree: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    m, n = a.shape[0], b.shape[1]
    if out is None:
        out = np.empty((m, n), a.dtype)
    else:
        _check_matrix("out", out, 2)
        if out.shape != (m, n) or out.dtype != a.dtype:
            raise DimensionError(f"out must be {(m, n)} {a.dtype}, got {out.shape} {out.dtype}")
    _bgemm_nn(a[None], b[None], out[None])
    return out


def _stack_members(name: str, members) -> np.ndarray:
    if isinstance(members, np.ndarray):
        _check_matrix(name, members, 3)
        return members
    arrs = list(members)
    if not arrs:
        raise DimensionError(f"{name} must hold at least one member")
    for i, m in enumerate(arrs):
        _check_matrix(f"{name}[{i}]", m, 2)
        if m.shape != arrs[0].shape or m.dtype != arrs[0].dtype:
            raise DimensionError(f"{name} members must share shape and dtype")
    return np.stack(arrs)


def grouped_gemm(a_members, b_members, out: GroupedBuffer,
                 pool: WorkerPool | None = None) -> GroupedBuffer:
    """Pairwise member products out[g] = a[g] @ b[g] into one backing buffer.

    Accepts stacked (G, m, k) arrays or sequences of 2-d members. Bitwise
    identical to calling `gemm` member by member, for any pool.
    """
    a3 = _stack_members("a_members", a_members)
    b3 = _stack_members("b_members", b_members)
    if a3.shape[0] != b3.shape[0]:
        raise DimensionError(f"group sizes disagree: {a3.shape[0]} vs {b3.shape[0]}")
    if a3.shape[2] != b3.shape[1]:
        raise DimensionError(f"inner dims disagree: {a3.shape} @ {b3.shape}")
    if a3.dtype != b3.dtype:
        raise DimensionError(f"dtype mismatch: {a3.dtype} vs {b3.dtype}")
    G, m, _ = a3.shape
    n = b3.shape[2]
    if not isinstance(out, GroupedBuffer):
        raise DimensionError("out must be a GroupedBuffer")
    if out.group_size != G or out.member_shape != (m, n) or out.dtype != a3.dtype:
        raise DimensionError(
            f"out buffer must be {G}x{(m, n)} {a3.dtype}, "
            f"got {out.group_size}x{out.member_shape} {out.dtype}")
    if pool is None:
        _bgemm_nn(a3, b3, out.array)
    else:
        pool.run(_bgemm_nn, G, a3, b3, out.array)
    return out


def rms_norm_stacked(x: np.ndarray, gains: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """RMS-normalize rows of a (G, T, d) stack with per-member gains (G, d).

    Reductions run along the last axis only, so each member's result is
    bitwise independent of whatever else shares the stack (the one-member
    call is literally the same arithmetic).
    """
    if x.ndim != 3 or gains.ndim != 2:
        raise DimensionError(f"expected x (G,T,d) and gains (G,d), got {x.shape} / {gains.shape}")
    if x.shape[0] != gains.shape[0] or x.shape[2] != gains.shape[1]:
        raise DimensionError(f"shape mismatch: x {x.shape} vs gains {gains.shape}")
    if x.dtype != gains.dtype:
        raise DimensionError(f"dtype mismatch: {x.dtype} vs {gains.dtype}")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x / np.sqrt(ms + eps) * gains[:, None, :]
