"""Stacked model weights and the on-disk weight container.

All per-layer parameters live stacked along a leading layer axis so a
group of layers can be gathered in one slice. The container format is a
tiny self-describing binary: magic, version, the JSON config, a manifest
of (name, dtype, shape, offset), then raw little-endian payloads. Writes
are fully deterministic, so one seed always produces one byte sequence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import InputError

MAGIC = b"ARMT"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class GroupedWeights:
    """Model parameters, layer-stacked.

    Square projections apply as ``x @ w``; the associative projections
    (w_k_mem, w_v_mem, w_beta, w_q_assoc) are stored output-by-input and
    apply as ``x @ w.T``.
    """

    config: ModelConfig
    embedding: np.ndarray        # (vocab, d_model)
    mem_embedding: np.ndarray    # (num_mem_tokens, d_model)
    wq: np.ndarray               # (L, d_model, d_model)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray           # (L, d_model, d_ff)
    w_in: np.ndarray             # (L, d_model, d_ff)
    w_out: np.ndarray            # (L, d_ff, d_model)
    attn_gain: np.ndarray        # (L, d_model)
    mlp_gain: np.ndarray         # (L, d_model)
    w_k_mem: np.ndarray          # (L, d_mem, d_model)
    w_v_mem: np.ndarray          # (L, d_model, d_model)
    w_beta: np.ndarray           # (L, 1, d_model)
    w_q_assoc: np.ndarray        # (L, d_mem, d_model)
    unembedding: np.ndarray      # (d_model, vocab)

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Tensors in canonical container order."""
        return {
            "embedding": self.embedding,
            "mem_embedding": self.mem_embedding,
            "wq": self.wq,
            "wk": self.wk,
            "wv": self.wv,
            "wo": self.wo,
            "w_gate": self.w_gate,
            "w_in": self.w_in,
            "w_out": self.w_out,
            "attn_gain": self.attn_gain,
            "mlp_gain": self.mlp_gain,
            "w_k_mem": self.w_k_mem,
            "w_v_mem": self.w_v_mem,
            "w_beta": self.w_beta,
            "w_q_assoc": self.w_q_assoc,
            "unembedding": self.unembedding,
        }


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    L, dm, dff = config.n_layers, config.d_model, config.d_ff
    return {
        "embedding": (config.vocab_size, dm),
        "mem_embedding": (config.num_mem_tokens, dm),
        "wq": (L, dm, dm),
        "wk": (L, dm, dm),
        "wv": (L, dm, dm),
        "wo": (L, dm, dm),
        "w_gate": (L, dm, dff),
        "w_in": (L, dm, dff),
        "w_out": (L, dff, dm),
        "attn_gain": (L, dm),
        "mlp_gain": (L, dm),
        "w_k_mem": (L, config.d_mem, dm),
        "w_v_mem": (L, dm, dm),
        "w_beta": (L, 1, dm),
        "w_q_assoc": (L, config.d_mem, dm),
        "unembedding": (dm, config.vocab_size),
    }


def init_weights(config: ModelConfig) -> GroupedWeights:
    """Seeded Gaussian init, 1/sqrt(fan_in) scale on every projection.

    Embedding tables use unit-variance rows (the first layer op is an RMS
    norm, so activation scale is set there); gains start at one. Arrays
    are drawn in a fixed order so one seed is one exact weight set.
    """
    rng = np.random.default_rng(config.seed)
    dm, dff = config.d_model, config.d_ff
    shapes = expected_shapes(config)

    def proj(name, fan_in):
        return rng.standard_normal(shapes[name]) * (1.0 / np.sqrt(fan_in))

    embedding = rng.standard_normal(shapes["embedding"])
    mem_embedding = rng.standard_normal(shapes["mem_embedding"])
    wq = proj("wq", dm)
    wk = proj("wk", dm)
    wv = proj("wv", dm)
    wo = proj("wo", dm)
    w_gate = proj("w_gate", dm)
    w_in = proj("w_in", dm)
    w_out = proj("w_out", dff)
    w_k_mem = proj("w_k_mem", dm)
    w_v_mem = proj("w_v_mem", dm)
    w_beta = proj("w_beta", dm)
    w_q_assoc = proj("w_q_assoc", dm)
    unembedding = proj("unembedding", dm)

    return GroupedWeights(
        config=config,
        embedding=embedding,
        mem_embedding=mem_embedding,
        wq=wq, wk=wk, wv=wv, wo=wo,
        w_gate=w_gate, w_in=w_in, w_out=w_out,
        attn_gain=np.ones(shapes["attn_gain"]),
        mlp_gain=np.ones(shapes["mlp_gain"]),
        w_k_mem=w_k_mem, w_v_mem=w_v_mem,
        w_beta=w_beta, w_q_assoc=w_q_assoc,
        unembedding=unembedding,
    )


# =========================================================================
# Container I/O
# =========================================================================

def save_weights(weights: GroupedWeights, path) -> None:
    arrays = weights.named_arrays()
    config_blob = weights.config.to_json().encode("utf-8")

    manifest = bytearray()
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise InputError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        manifest += struct.pack("<H", len(name_b)) + name_b
        manifest += struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        manifest += struct.pack("<Q", len(payload))
        payload += arr.astype(dtype, copy=False).tobytes(order="C")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(arrays)))
        fh.write(bytes(manifest))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(bytes(payload))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise InputError(f"weight container {self.path} is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path) -> GroupedWeights:
    """Read a container back; every tensor reproduces bitwise.

    Loaded arrays are read-only views into the file bytes (weights are
    immutable once loaded).
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read weight container {path}: {exc}") from exc

    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise InputError(f"{path} is not a weight container (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported container version {version}")
    (config_len,) = r.unpack("<I")
    config = ModelConfig.from_json(r.take(config_len).decode("utf-8"))

    (n_arrays,) = r.unpack("<I")
    entries = []
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise InputError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        (offset,) = r.unpack("<Q")
        entries.append((name, _CODE_DTYPES[code], shape, offset))
    (payload_len,) = r.unpack("<Q")
    payload = r.take(payload_len)
    if r.pos != len(data):
        raise InputError(f"{path}: trailing bytes after payload")

    arrays = {}
    for name, dtype, shape, offset in entries:
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset + nbytes > payload_len:
            raise InputError(f"{path}: tensor {name!r} payload out of bounds")
        arrays[name] = np.frombuffer(payload, dtype, count=int(np.prod(shape)),
                                     offset=offset).reshape(shape)

    expected = expected_shapes(config)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise InputError(f"{path}: tensor set mismatch (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise InputError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, expected {shape}")

    return GroupedWeights(config=config, **arrays)
