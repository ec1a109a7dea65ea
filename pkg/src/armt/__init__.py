"""Desk-scale inference engine for layer-recurrent memory transformers.

Each transformer layer carries an associative fast-weight memory updated
once per segment, so the (segment, layer) grid has only two dependencies
per node. The engine runs that grid two ways, bit-for-bit equivalently:
node by node (sequential baseline) or one anti-diagonal at a time
(grouped wavefront, S + L - 1 steps).
"""

from .config import DTYPES, ModelConfig, resolve_dtype
from .errors import DimensionError, EngineError, InputError, SchedulingError
from .executors import (ExecutionTrace, TraceEvent, relative_error,
                        run_diagonal, run_sequential, segment_input)
from .layers import (PreparedWeights, SegmentActivation, embed_segment,
                     grouped_layer_forward, layer_forward, prepare_weights,
                     unembed)
from .memory import MemoryState, assoc_retrieve, assoc_update, dpfp
from .reports import BenchReport, BenchRow, TOLERANCES, VerifyReport, VerifyRow
from .scheduler import (DiagonalSchedule, Node, ScheduleCheck,
                        build_diagonal_schedule, min_groups_oracle,
                        validate_schedule)
from .tensor_ops import GroupedBuffer, WorkerPool, gemm, grouped_gemm, rms_norm_stacked
from .weights import GroupedWeights, init_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "BenchRow", "DiagonalSchedule", "DimensionError", "DTYPES",
    "EngineError", "ExecutionTrace", "GroupedBuffer", "GroupedWeights",
    "InputError", "MemoryState", "ModelConfig", "Node", "PreparedWeights",
    "ScheduleCheck", "SchedulingError", "SegmentActivation", "TOLERANCES",
    "TraceEvent", "VerifyReport", "VerifyRow", "WorkerPool", "assoc_retrieve",
    "assoc_update", "build_diagonal_schedule", "dpfp", "embed_segment", "gemm",
    "grouped_gemm", "grouped_layer_forward", "init_weights", "layer_forward",
    "load_weights", "min_groups_oracle", "prepare_weights", "relative_error",
    "rms_norm_stacked", "run_diagonal", "run_sequential", "save_weights",
    "segment_input", "unembed", "validate_schedule",
]
