"""Training-step engines: joint network, output layer and loss over a batch.

Four modes produce the same loss and gradients:

``batched``
    One pass over the padded ``[B, T, U+1, ...]`` tensors. Padded lattice
    regions are masked by the per-sample lengths, not truncated.
``sample_wise``
    Loop over samples with batch size 1 and accumulate gradients; each
    sample's ``z``, ``h`` and ``dh`` are released before the next one starts.
``sample_wise_pr``
    As above, but each sample's encodings are first cropped to its true
    lengths (padding removal).
``sample_wise_pr_dp``
    Padding removal plus several samples in flight at once. The number of
    parallel iterations is derived from the size of the per-sample score
    tensor and a memory budget (:func:`compute_parallel_iterations`).
    Per-sample gradients are reduced strictly in ascending sample order, so
    results are bitwise independent of thread timing.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .compute import JointParams, OutputParams, SampleEncodings, joint_backward, joint_forward, output_backward, output_forward
from .errors import InvalidInputError, InvalidShapeError
from .loss import transducer_loss_batch, transducer_loss_sample
from .tensor import BYTES_PER_ELEMENT, Tensor, alloc, crop, free

MODES = ("batched", "sample_wise", "sample_wise_pr", "sample_wise_pr_dp")
MAX_PARALLEL = 16


@dataclass
class Batch:
    """Padded encoder outputs, labels and true lengths.

    ``labels`` is an int array ``[B, U]``; entries at or beyond ``u_len[b]``
    are padding. Encoding rows at or beyond ``t_len[b]`` (``u_len[b] + 1``
    for ``h_L``) are expected to be zero.
    """

    h_A: Tensor  # [B, T, H_A]
    h_L: Tensor  # [B, U+1, H_L]
    labels: np.ndarray
    t_len: np.ndarray
    u_len: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.t_len = np.asarray(self.t_len, dtype=np.int64)
        self.u_len = np.asarray(self.u_len, dtype=np.int64)
        if len(self.h_A.shape) != 3 or len(self.h_L.shape) != 3 or self.h_A.shape[0] != self.h_L.shape[0]:
            raise InvalidShapeError(f"expected h_A [B,T,H_A] and h_L [B,U+1,H_L], got {self.h_A.shape}, {self.h_L.shape}")
        B, T, U = self.B, self.T, self.U
        if self.labels.shape != (B, U):
            raise InvalidShapeError(f"labels shape {self.labels.shape} != {(B, U)}")
        if self.t_len.shape != (B,) or self.u_len.shape != (B,):
            raise InvalidShapeError("t_len and u_len must have one entry per sample")
        if np.any(self.t_len < 1) or np.any(self.t_len > T):
            raise InvalidInputError(f"t_len must lie in [1, {T}], got {self.t_len.tolist()}")
        if np.any(self.u_len < 0) or np.any(self.u_len > U):
            raise InvalidInputError(f"u_len must lie in [0, {U}], got {self.u_len.tolist()}")

    @property
    def B(self) -> int:
        return self.h_A.shape[0]

    @property
    def T(self) -> int:
        return self.h_A.shape[1]

    @property
    def U(self) -> int:
        return self.h_L.shape[1] - 1

    @property
    def precision(self) -> str:
        return self.h_A.precision

    def sample_labels(self, b: int) -> np.ndarray:
        return self.labels[b, : self.u_len[b]]

    def tensors(self) -> list[Tensor]:
        return [self.h_A, self.h_L]


@dataclass
class GradientSet:
    """Parameter gradients plus the gradients flowing back into the encoders."""

    dW_A: Tensor
    dW_L: Tensor
    db_Z: Tensor
    dW_O: Tensor
    db_O: Tensor
    dh_A: Tensor
    dh_L: Tensor

    PARAM_FIELDS = ("dW_A", "dW_L", "db_Z", "dW_O", "db_O")

    @classmethod
    def zeros(cls, batch: Batch, jp: JointParams, op: OutputParams) -> "GradientSet":
        prec = jp.precision
        specs = [
            ("dW_A", jp.W_A.shape), ("dW_L", jp.W_L.shape), ("db_Z", jp.b_Z.shape),
            ("dW_O", op.W_O.shape), ("db_O", op.b_O.shape),
            ("dh_A", batch.h_A.shape), ("dh_L", batch.h_L.shape),
        ]
        made = {}
        try:
            for name, shape in specs:
                made[name] = alloc(shape, prec, name=name)
        except BaseException:
            free(*made.values())
            raise
        return cls(**made)

    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def free(self) -> None:
        free(*self.tensors())


@dataclass
class SampleGradients:
    """One sample's gradient contribution. ``dh_A``/``dh_L`` may be cropped."""

    loss: float
    dW_A: Tensor
    dW_L: Tensor
    db_Z: Tensor
    dW_O: Tensor
    db_O: Tensor
    dh_A: Tensor
    dh_L: Tensor

    def tensors(self) -> list[Tensor]:
        return [self.dW_A, self.dW_L, self.db_Z, self.dW_O, self.db_O, self.dh_A, self.dh_L]

    def free(self) -> None:
        free(*self.tensors())


@dataclass
class EngineConfig:
    mode: str = "batched"
    mem_budget_bytes: int = 10**9
    max_parallel: int = MAX_PARALLEL
    precision: str = "f32"
    worker_count: int = 4
    # True: size parallel iterations from the cropped lattice actually
    # allocated (max T_b, max U_b + 1, real element size). False: the literal
    # form with max U_b and 4-byte elements.
    pi_from_allocated: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mem_budget_bytes <= 0:
            raise InvalidInputError("mem_budget_bytes must be positive")
        if self.worker_count < 1:
            raise InvalidInputError("worker_count must be >= 1")
        mp = self.max_parallel
        if mp < 1 or (self.mode == "sample_wise_pr_dp" and (mp > MAX_PARALLEL or mp & (mp - 1))):
            raise InvalidInputError(f"max_parallel must be a power of two <= {MAX_PARALLEL}, got {mp}")


def compute_parallel_iterations(T_c: int, U_c: int, V: int, budget: float = 1e9, bytes_per_element: int = 4, max_parallel: int = MAX_PARALLEL) -> int:
    """``2 ** clamp(floor(log2(budget / (bytes * T_c * U_c * V))), 0, log2(max_parallel))``.

    >>> compute_parallel_iterations(500, 100, 4096)
    1
    >>> compute_parallel_iterations(50, 10, 4096)
    16
    """
    if min(T_c, U_c, V) < 1 or budget <= 0:
        raise InvalidInputError(f"need positive sizes and budget, got T={T_c} U={U_c} V={V} budget={budget}")
    ratio = budget / (bytes_per_element * T_c * U_c * V)
    exponent = math.floor(math.log2(ratio))
    exponent = max(0, min(int(math.log2(max_parallel)), exponent))
    return 2**exponent


def accumulate(grads: GradientSet, sample: SampleGradients, b: int) -> GradientSet:
    """Add a sample's parameter gradients and write its encoder-input gradients to slot ``b``."""
    for name in GradientSet.PARAM_FIELDS:
        getattr(grads, name).data += getattr(sample, name).data
    t, u1 = sample.dh_A.shape[0], sample.dh_L.shape[0]
    grads.dh_A.data[b, :t] = sample.dh_A.data
    grads.dh_L.data[b, :u1] = sample.dh_L.data
    return grads


def _check_inputs(batch: Batch, jp: JointParams, op: OutputParams):
    if jp.H != op.H:
        raise InvalidShapeError(f"joint size {jp.H} != output layer input size {op.H}")
    if batch.h_A.shape[2] != jp.H_A or batch.h_L.shape[2] != jp.H_L:
        raise InvalidShapeError("encoding sizes do not match the joint parameters")
    if len({batch.precision, jp.precision, op.precision}) != 1:
        raise InvalidShapeError("batch and parameters must share one precision")


def run_batched(batch: Batch, jp: JointParams, op: OutputParams) -> tuple[float, GradientSet]:
    """Reference engine: every stage on full padded batch tensors."""
    _check_inputs(batch, jp, op)
    enc = SampleEncodings(batch.h_A, batch.h_L)
    z = h = dh = dz = None
    outs = ()
    try:
        z = joint_forward(enc, jp)
        h = output_forward(z, op)
        losses, dh = transducer_loss_batch(h, batch.labels, batch.t_len, batch.u_len)
        h.free()
        dz, dW_O, db_O = output_backward(dh, z, op)
        outs = (dW_O, db_O)
        dh.free()
        dh_A, dh_L, dW_A, dW_L, db_Z = joint_backward(dz, z, enc, jp)
    except BaseException:
        free(*outs)
        raise
    finally:
        free(z, h, dh, dz)
    loss = 0.0
    for value in losses:
        loss += value
    return loss, GradientSet(dW_A, dW_L, db_Z, dW_O, db_O, dh_A, dh_L)


def process_sample(batch: Batch, b: int, jp: JointParams, op: OutputParams, remove_padding: bool) -> SampleGradients:
    """Forward and backward for sample ``b`` at batch size 1.

    Intermediates are freed as soon as the pipeline no longer reads them:
    ``h`` after the loss, ``dh`` after the output-layer backward, ``z`` at the end.
    """
    T_b, U_b = int(batch.t_len[b]), int(batch.u_len[b])
    h_A, h_L = batch.h_A.select(b), batch.h_L.select(b)
    crops = []
    z = h = dh = dz = None
    outs = ()
    try:
        if remove_padding and T_b < batch.T:
            h_A = crop(h_A, [T_b, h_A.shape[1]], name="h_A*")
            crops.append(h_A)
        if remove_padding and U_b < batch.U:
            h_L = crop(h_L, [U_b + 1, h_L.shape[1]], name="h_L*")
            crops.append(h_L)
        enc = SampleEncodings(h_A, h_L)
        z = joint_forward(enc, jp)
        h = output_forward(z, op)
        loss, dh = transducer_loss_sample(h, batch.sample_labels(b), T_b)
        h.free()
        dz, dW_O, db_O = output_backward(dh, z, op)
        outs = (dW_O, db_O)
        dh.free()
        dh_A, dh_L, dW_A, dW_L, db_Z = joint_backward(dz, z, enc, jp)
    except BaseException:
        free(*outs)
        raise
    finally:
        free(z, h, dh, dz, *crops)
    return SampleGradients(loss, dW_A, dW_L, db_Z, dW_O, db_O, dh_A, dh_L)


def batch_parallel_iterations(batch: Batch, V: int, cfg: EngineConfig) -> int:
    """Parallel iterations for this batch, from its longest cropped lengths."""
    T_c = int(batch.t_len.max())
    if cfg.pi_from_allocated:
        U_c = int(batch.u_len.max()) + 1
        nbytes = BYTES_PER_ELEMENT[batch.precision]
    else:
        U_c = max(1, int(batch.u_len.max()))
        nbytes = 4
    return compute_parallel_iterations(T_c, U_c, V, cfg.mem_budget_bytes, nbytes, cfg.max_parallel)


def run_sample_wise(batch: Batch, jp: JointParams, op: OutputParams, cfg: EngineConfig | None = None) -> tuple[float, GradientSet]:
    cfg = cfg or EngineConfig(mode="sample_wise")
    _check_inputs(batch, jp, op)
    if cfg.mode == "batched":
        raise InvalidInputError("run_sample_wise needs a sample-wise mode")
    remove_padding = cfg.mode != "sample_wise"
    n_workers = 1
    if cfg.mode == "sample_wise_pr_dp":
        n_workers = min(batch_parallel_iterations(batch, op.V, cfg), cfg.worker_count, batch.B)

    grads = GradientSet.zeros(batch, jp, op)
    loss = 0.0
    try:
        if n_workers == 1:
            for b in range(batch.B):
                sample = process_sample(batch, b, jp, op, remove_padding)
                accumulate(grads, sample, b)
                loss += sample.loss
                sample.free()
        else:
            loss = _run_parallel(batch, jp, op, grads, n_workers)
    except BaseException:
        grads.free()
        raise
    return loss, grads


def _run_parallel(batch, jp, op, grads, n_workers) -> float:
    # Sliding window: at most n_workers samples are in flight or awaiting
    # reduction; reduction order is always b = 0, 1, ..., B-1.
    loss = 0.0
    pending = deque()
    next_b = 0
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        try:
            for b in range(batch.B):
                while next_b < batch.B and len(pending) < n_workers:
                    pending.append(pool.submit(process_sample, batch, next_b, jp, op, True))
                    next_b += 1
                sample = pending.popleft().result()
                accumulate(grads, sample, b)
                loss += sample.loss
                sample.free()
        except BaseException:
            for fut in pending:
                fut.cancel()
            for fut in pending:
                if not fut.cancelled() and fut.exception() is None:
                    fut.result().free()
            raise
    return loss


def run(batch: Batch, jp: JointParams, op: OutputParams, cfg: EngineConfig) -> tuple[float, GradientSet]:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "batched":
        return run_batched(batch, jp, op)
    return run_sample_wise(batch, jp, op, cfg)


# -- analytic footprints -------------------------------------------------------


def per_sample_3d_bytes(T: int, U: int, H_A: int, H_L: int, precision: str = "f32") -> int:
    """Bytes one sample adds to the batch-level 3D tensors h_A, h_L, dh_A, dh_L."""
    return 2 * (T * H_A + (U + 1) * H_L) * BYTES_PER_ELEMENT[precision]


def per_sample_4d_bytes(T: int, U: int, H: int, V: int, precision: str = "f32") -> int:
    """Bytes of one sample's z, h and dh slices."""
    return T * (U + 1) * (H + 2 * V) * BYTES_PER_ELEMENT[precision]


def sample_working_set_bytes(T: int, U: int, H: int, V: int, precision: str = "f32") -> int:
    """Bytes of every lattice-sized tensor one sample pipeline allocates: z, h, dh, dz, g."""
    return T * (U + 1) * (3 * H + 2 * V) * BYTES_PER_ELEMENT[precision]


def batched_4d_bytes(B: int, T: int, U: int, H: int, V: int, precision: str = "f32") -> int:
    return B * per_sample_4d_bytes(T, U, H, V, precision)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a - b| / max|b|`` (absolute when ``b`` is all zero)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.abs(b).max() if b.size else 0.0
    diff = np.abs(a - b).max() if a.size else 0.0
    return float(diff / scale) if scale > 0 else float(diff)


def compare_results(first: tuple[float, GradientSet], second: tuple[float, GradientSet]) -> dict[str, float]:
    """Relative error of the loss and of each gradient tensor, ``first`` against ``second``."""
    out = {"loss": relative_error([first[0]], [second[0]])}
    for (name, a), (_, b) in zip(first[1].items(), second[1].items()):
        out[name] = relative_error(a.data, b.data)
    return out


def make_batch(h_A, h_L, labels, t_len: Sequence[int], u_len: Sequence[int], precision: str = "f64") -> Batch:
    """Build a :class:`Batch` from plain arrays, zeroing the padded regions."""
    h_A = Tensor.from_array(h_A, precision, name="h_A")
    h_L = Tensor.from_array(h_L, precision, name="h_L")
    labels = np.array(labels, dtype=np.int64)
    for b, (t, u) in enumerate(zip(t_len, u_len)):
        h_A.data[b, t:] = 0
        h_L.data[b, u + 1 :] = 0
        labels[b, u:] = 0
    return Batch(h_A, h_L, labels, np.asarray(t_len), np.asarray(u_len))
