"""Machine-readable reports and their schemas.

Every JSON document the CLI emits (verify, bench, trace) is validated
against a schema file shipped inside the package before it leaves the
process, so downstream tooling can rely on the shape without reading
this code.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources

import jsonschema

from .errors import InputError

# Equivalence gates for verify: diagonal-vs-sequential relative Frobenius
# error must stay under these per precision.
TOLERANCES = {"f32": 1e-3, "f64": 1e-12}

VERIFY_CSV_HEADER = "segments,rel_error_f32,rel_error_f64"
BENCH_CSV_HEADER = ("mode,threads,seq_len,segments,wall_seconds,"
                    "seconds_per_segment,speedup_vs_sequential")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def load_schema(name: str) -> dict:
    path = resources.files("armt.schemas").joinpath(f"{name}.schema.json")
    return json.loads(path.read_text())


def validate_report(obj: dict, schema_name: str) -> None:
    try:
        jsonschema.validate(obj, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise InputError(f"{schema_name} report fails its schema: {exc.message}") from exc


# =========================================================================
# Verify
# =========================================================================

@dataclass
class VerifyRow:
    segments: int
    rel_error_f32: float | None
    rel_error_f64: float | None


@dataclass
class VerifyReport:
    config: dict
    precision: str                    # f32 | f64 | both
    rows: list[VerifyRow]
    passed: bool
    tolerance_f32: float = TOLERANCES["f32"]
    tolerance_f64: float = TOLERANCES["f64"]
    timestamp: str = field(default_factory=_utc_now)

    def to_json_dict(self) -> dict:
        doc = {
            "config": self.config,
            "precision": self.precision,
            "tolerance_f32": self.tolerance_f32,
            "tolerance_f64": self.tolerance_f64,
            "rows": [
                {"segments": r.segments,
                 "rel_error_f32": r.rel_error_f32,
                 "rel_error_f64": r.rel_error_f64}
                for r in self.rows
            ],
            "passed": self.passed,
            "timestamp": self.timestamp,
        }
        validate_report(doc, "verify")
        return doc

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(VERIFY_CSV_HEADER + "\n")
        for r in self.rows:
            f32 = "" if r.rel_error_f32 is None else repr(r.rel_error_f32)
            f64 = "" if r.rel_error_f64 is None else repr(r.rel_error_f64)
            out.write(f"{r.segments},{f32},{f64}\n")
        return out.getvalue()


# =========================================================================
# Bench
# =========================================================================

@dataclass
class BenchRow:
    mode: str                         # sequential | diagonal | minibatch
    threads: int
    seq_len: int
    segments: int
    wall_seconds: float
    seconds_per_segment: float
    speedup_vs_sequential: float


@dataclass
class BenchReport:
    config: dict
    environment: dict
    rows: list[BenchRow]

    def to_json_dict(self) -> dict:
        doc = {
            "config": self.config,
            "environment": self.environment,
            "rows": [
                {"mode": r.mode, "threads": r.threads, "seq_len": r.seq_len,
                 "segments": r.segments, "wall_seconds": r.wall_seconds,
                 "seconds_per_segment": r.seconds_per_segment,
                 "speedup_vs_sequential": r.speedup_vs_sequential}
                for r in self.rows
            ],
        }
        validate_report(doc, "bench")
        return doc

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(BENCH_CSV_HEADER + "\n")
        for r in self.rows:
            out.write(f"{r.mode},{r.threads},{r.seq_len},{r.segments},"
                      f"{r.wall_seconds!r},{r.seconds_per_segment!r},"
                      f"{r.speedup_vs_sequential!r}\n")
        return out.getvalue()
