"""Model configuration.

A ModelConfig pins every structural hyperparameter of the engine. It is
embedded verbatim in weight containers so a saved model is self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields

import numpy as np

from .errors import InputError

# Run precision is selected by short name everywhere (CLI, API, container).
DTYPES: dict[str, np.dtype] = {
    "f32": np.dtype(np.float32),
    "f64": np.dtype(np.float64),
}

# Denominator guards for the associative memory, per precision. Chosen so a
# guarded quotient can never amplify representable rounding noise into a
# large retrieval.
DEFAULT_EPS_ASSOC = {"f32": 1e-6, "f64": 1e-12}

ROPE_BASE = 10000.0


def resolve_dtype(name: str) -> np.dtype:
    if name not in DTYPES:
        raise InputError(f"unknown dtype {name!r}; expected one of {sorted(DTYPES)}")
    return DTYPES[name]


@dataclass
class ModelConfig:
    """Structural hyperparameters of a model.

    ``eps_assoc=None`` means "pick the default for the run precision";
    an explicit float overrides it for both precisions.
    """

    n_layers: int = 8
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    segment_size: int = 64
    num_mem_tokens: int = 8
    d_mem: int = 16
    dpfp_nu: int = 3
    vocab_size: int = 256
    eps_assoc: float | None = None
    eps_norm: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        self.validate()

    # -- derived sizes ----------------------------------------------------

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_phi(self) -> int:
        # DPFP feature dimension: nu rotated copies of the 2*d_mem relu split.
        return 2 * self.dpfp_nu * self.d_mem

    @property
    def tokens_per_segment(self) -> int:
        # Memory read/write tokens ride along with every segment.
        return self.segment_size + self.num_mem_tokens

    def effective_eps_assoc(self, dtype_name: str) -> float:
        if self.eps_assoc is not None:
            return float(self.eps_assoc)
        if dtype_name not in DEFAULT_EPS_ASSOC:
            raise InputError(f"unknown dtype {dtype_name!r}")
        return DEFAULT_EPS_ASSOC[dtype_name]

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        problems = []
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "segment_size",
                     "num_mem_tokens", "d_mem", "dpfp_nu", "vocab_size"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        if self.n_heads >= 1 and self.d_model % self.n_heads != 0:
            problems.append("d_model must be divisible by n_heads")
        elif self.n_heads >= 1 and (self.d_model // self.n_heads) % 2 != 0:
            problems.append("head dim must be even (rotary position pairs)")
        if self.vocab_size < 1:
            problems.append("vocab_size must be >= 1")
        if self.eps_assoc is not None and not (float(self.eps_assoc) > 0.0):
            problems.append("eps_assoc must be positive when given")
        if not (float(self.eps_norm) > 0.0):
            problems.append("eps_norm must be positive")
        if problems:
            raise InputError("invalid config: " + "; ".join(problems))

    # -- (de)serialization ---------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"config payload is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"config payload has unknown fields: {sorted(unknown)}")
        return cls(**raw)
