"""Benchmark protocol: synthetic inputs, warmup + timed steps, peak memory, reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .compute import init_params
from .engine import MODES, Batch, EngineConfig, run
from .errors import InvalidInputError, OutOfMemoryError
from .tensor import AllocationTracker, Tensor, check_precision, free, use_tracker

# Zero-padding ramps across the batch: first sample unpadded, last sample
# padded by this fraction of the acoustic / label length.
ACOUSTIC_PAD_MAX = Fraction("0.093")
LABEL_PAD_MAX = Fraction("0.458")

DESK_PRESET = dict(B=8, T=64, U=16, H=128, H_A=128, H_L=128, V=256)
FULL_PRESET = dict(B=16, T=500, U=100, H=1024, H_A=1024, H_L=1024, V=4096)

CSV_COLUMNS = (
    "mode", "B", "T", "U", "H", "H_A", "H_L", "V", "precision",
    "median_step_seconds", "peak_bytes", "status", "seed",
)


@dataclass
class BenchConfig:
    B: int = DESK_PRESET["B"]
    T: int = DESK_PRESET["T"]
    U: int = DESK_PRESET["U"]
    H: int = DESK_PRESET["H"]
    H_A: int = DESK_PRESET["H_A"]
    H_L: int = DESK_PRESET["H_L"]
    V: int = DESK_PRESET["V"]
    mode: str = "batched"
    warmup_steps: int = 3
    bench_steps: int = 100
    seed: int = 0
    precision: str = "f32"
    mem_budget_bytes: int = 10**9
    allocation_ceiling_bytes: int | None = None
    output_format: str = "csv"
    worker_count: int = 4

    def __post_init__(self):
        for name in ("B", "T", "U", "H", "H_A", "H_L", "V"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.V < 2:
            raise InvalidInputError("V must be at least 2 (blank plus one label)")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.warmup_steps < 0 or self.bench_steps < 1:
            raise InvalidInputError("need warmup_steps >= 0 and bench_steps >= 1")
        if self.output_format not in ("csv", "json"):
            raise InvalidInputError(f"output_format must be csv or json, got {self.output_format!r}")
        if self.mem_budget_bytes <= 0:
            raise InvalidInputError("mem_budget_bytes must be positive")
        if self.allocation_ceiling_bytes is not None and self.allocation_ceiling_bytes <= 0:
            raise InvalidInputError("allocation_ceiling_bytes must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        try:
            check_precision(self.precision)
        except ValueError as e:
            raise InvalidInputError(str(e)) from None

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            mode=self.mode,
            mem_budget_bytes=self.mem_budget_bytes,
            precision=self.precision,
            worker_count=self.worker_count,
        )


@dataclass
class BenchResult:
    config: BenchConfig
    status: str
    median_step_seconds: float | None
    per_step_seconds: list[float] = field(default_factory=list)
    peak_bytes: int = 0
    live_bytes_after: int = 0
    loss: float | None = None
    failed_alloc_bytes: int | None = None

    @property
    def mode(self) -> str:
        return self.config.mode

    def to_record(self) -> dict:
        """Flat dict: the CSV columns first, then the remaining fields."""
        cfg = dataclasses.asdict(self.config)
        rec = {}
        for col in CSV_COLUMNS:
            rec[col] = cfg[col] if col in cfg else getattr(self, col)
        rec.update(
            per_step_seconds=list(self.per_step_seconds),
            live_bytes_after=self.live_bytes_after,
            loss=self.loss,
            failed_alloc_bytes=self.failed_alloc_bytes,
        )
        for name, value in cfg.items():
            rec.setdefault(name, value)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "BenchResult":
        cfg_names = {f.name for f in dataclasses.fields(BenchConfig)}
        cfg = BenchConfig(**{k: v for k, v in rec.items() if k in cfg_names})
        own = {f.name for f in dataclasses.fields(cls)} - {"config"}
        return cls(config=cfg, **{k: v for k, v in rec.items() if k in own})


def round_half_away(x: Fraction) -> int:
    return int(math.floor(x + Fraction(1, 2))) if x >= 0 else -int(math.floor(-x + Fraction(1, 2)))


def padded_lengths(B: int, T: int, U: int) -> tuple[list[int], list[int]]:
    """True lengths per sample under the linear padding ramps.

    >>> padded_lengths(4, 500, 100)
    ([500, 485, 469, 454], [100, 85, 69, 54])
    """
    t_len, u_len = [], []
    for b in range(B):
        ramp = Fraction(b, B - 1) if B > 1 else Fraction(0)
        t_len.append(max(1, round_half_away(T * (1 - ACOUSTIC_PAD_MAX * ramp))))
        u_len.append(max(1, round_half_away(U * (1 - LABEL_PAD_MAX * ramp))))
    return t_len, u_len


def synth_inputs(cfg: BenchConfig):
    """Seeded batch and parameters. Returns ``(batch, joint_params, output_params)``."""
    rng = np.random.default_rng(cfg.seed)
    t_len, u_len = padded_lengths(cfg.B, cfg.T, cfg.U)
    h_A = Tensor.from_array(rng.uniform(-0.1, 0.1, size=(cfg.B, cfg.T, cfg.H_A)), cfg.precision, name="h_A")
    h_L = Tensor.from_array(rng.uniform(-0.1, 0.1, size=(cfg.B, cfg.U + 1, cfg.H_L)), cfg.precision, name="h_L")
    labels = rng.integers(1, cfg.V, size=(cfg.B, cfg.U))
    for b in range(cfg.B):
        h_A.data[b, t_len[b]:] = 0
        h_L.data[b, u_len[b] + 1:] = 0
        labels[b, u_len[b]:] = 0
    batch = Batch(h_A, h_L, labels, t_len, u_len)
    jp, op = init_params(cfg.H, cfg.H_A, cfg.H_L, cfg.V, rng, cfg.precision)
    return batch, jp, op


def analytic_sizes(cfg: BenchConfig) -> dict[str, int]:
    """Payload bytes of the main tensors for ``cfg``, computed without allocating."""
    bpe = 4 if cfg.precision == "f32" else 8
    B, T, U1 = cfg.B, cfg.T, cfg.U + 1
    return {
        "h_A": B * T * cfg.H_A * bpe,
        "h_L": B * U1 * cfg.H_L * bpe,
        "z": B * T * U1 * cfg.H * bpe,
        "h": B * T * U1 * cfg.V * bpe,
        "dh": B * T * U1 * cfg.V * bpe,
        "z_per_sample": T * U1 * cfg.H * bpe,
        "h_per_sample": T * U1 * cfg.V * bpe,
    }


def run_benchmark(cfg: BenchConfig) -> BenchResult:
    """Warmup, then ``bench_steps`` timed engine calls.

    The tracker peak window is reset before every recorded step; the reported
    peak is the maximum over recorded steps. Hitting the allocation ceiling
    ends the run with ``status="oom"``.
    """
    tracker = AllocationTracker(ceiling_bytes=cfg.allocation_ceiling_bytes)
    ecfg = cfg.engine_config()
    times: list[float] = []
    peak = 0
    loss = None
    inputs = ()
    with use_tracker(tracker):
        try:
            batch, jp, op = synth_inputs(cfg)
            inputs = (*batch.tensors(), *jp.tensors(), *op.tensors())
            for _ in range(cfg.warmup_steps):
                _, grads = run(batch, jp, op, ecfg)
                grads.free()
            for _ in range(cfg.bench_steps):
                tracker.reset()
                start = time.perf_counter_ns()
                loss, grads = run(batch, jp, op, ecfg)
                times.append((time.perf_counter_ns() - start) / 1e9)
                grads.free()
                peak = max(peak, tracker.peak_bytes)
        except OutOfMemoryError as e:
            result = BenchResult(
                config=cfg, status="oom", median_step_seconds=None, per_step_seconds=times,
                peak_bytes=max(peak, tracker.peak_bytes), loss=None, failed_alloc_bytes=e.nbytes,
            )
            free(*inputs)
            result.live_bytes_after = tracker.live_bytes
            return result
        live_after = tracker.live_bytes
        free(*inputs)
    return BenchResult(
        config=cfg, status="ok", median_step_seconds=statistics.median(times), per_step_seconds=times,
        peak_bytes=peak, live_bytes_after=live_after, loss=loss,
    )


def parse_length_value(value, base: BenchConfig) -> tuple[int, int]:
    """``"139x27"`` sets (T, U) directly; a number scales the base T and U."""
    if isinstance(value, str) and "x" in value.lower():
        t, u = value.lower().split("x")
        return int(t), int(u)
    factor = Fraction(str(value))
    return max(1, round_half_away(base.T * factor)), max(1, round_half_away(base.U * factor))


def sweep(cfg_base: BenchConfig, axis: str, values: Sequence) -> list[BenchResult]:
    """One benchmark per value along ``axis`` (``batch_size`` or ``lengths``).

    An out-of-memory point is recorded and the sweep continues.
    """
    axis = axis.replace("-", "_")
    if axis == "batch_size":
        points = [dataclasses.replace(cfg_base, B=int(v)) for v in values]
        keys = [p.B for p in points]
    elif axis == "lengths":
        points = []
        for v in values:
            T, U = parse_length_value(v, cfg_base)
            points.append(dataclasses.replace(cfg_base, T=T, U=U))
        keys = [p.T * p.U for p in points]
    else:
        raise InvalidInputError(f"axis must be batch_size or lengths, got {axis!r}")
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    if any(b < a for a, b in zip(keys, keys[1:])):
        raise InvalidInputError(f"sweep values must be ascending, got {list(values)}")
    return [run_benchmark(p) for p in points]


def emit_report(results: Sequence[BenchResult], fmt: str = "csv", path: str | None = None) -> str:
    """Serialize results as CSV (fixed columns) or JSON (full records).

    Writes to ``path`` when given; the serialized text is returned either way.
    """
    if not results:
        raise InvalidInputError("no results to report")
    records = [r.to_record() for r in results]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: ("" if rec[k] is None else rec[k]) for k in CSV_COLUMNS})
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(records, indent=2) + "\n"
    else:
        raise InvalidInputError(f"format must be csv or json, got {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_report(text: str) -> list[BenchResult]:
    """Parse a JSON report back into results."""
    return [BenchResult.from_record(rec) for rec in json.loads(text)]
