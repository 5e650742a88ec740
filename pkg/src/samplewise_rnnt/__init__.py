"""Memory-instrumented transducer loss with batched and sample-wise training steps."""

from .bench import BenchConfig, BenchResult, emit_report, run_benchmark, sweep, synth_inputs
from .compute import JointParams, OutputParams, SampleEncodings, init_params
from .engine import MODES, Batch, EngineConfig, GradientSet, compute_parallel_iterations, make_batch, run
from .errors import (
    InstanceTooLargeError,
    InvalidInputError,
    InvalidShapeError,
    NumericalDegeneracyError,
    OutOfMemoryError,
)
from .loss import transducer_loss_batch, transducer_loss_sample
from .tensor import AllocationTracker, Tensor, alloc, get_tracker, use_tracker

__version__ = "0.1.0"

__all__ = [
    "AllocationTracker", "Batch", "BenchConfig", "BenchResult", "EngineConfig", "GradientSet",
    "InstanceTooLargeError", "InvalidInputError", "InvalidShapeError", "JointParams", "MODES",
    "NumericalDegeneracyError", "OutOfMemoryError", "OutputParams", "SampleEncodings", "Tensor",
    "alloc", "compute_parallel_iterations", "emit_report", "get_tracker", "init_params", "make_batch",
    "run", "run_benchmark", "sweep", "synth_inputs", "transducer_loss_batch", "transducer_loss_sample",
    "use_tracker",
]
