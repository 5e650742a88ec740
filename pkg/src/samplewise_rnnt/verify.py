"""Self-check battery: loss oracle, finite differences, engine equivalence, memory.

Each suite returns a :class:`SuiteResult`; :func:`verify` runs them all and
prints one line per suite. On failure the first failing case is dumped so it
can be reproduced.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import compute, loss as loss_mod, oracle
from .bench import BenchConfig, synth_inputs
from .compute import JointParams, OutputParams, SampleEncodings
from .engine import MODES, EngineConfig, compare_results, make_batch, per_sample_3d_bytes, per_sample_4d_bytes, run
from .tensor import AllocationTracker, Tensor, free, use_tracker

SCALES = {
    "small": dict(loss_cases=60, fd_cases=6, engine_cases=10, seed=1234),
    "medium": dict(loss_cases=200, fd_cases=20, engine_cases=50, seed=1234),
}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    seconds: float = 0.0
    failure: dict | None = field(default=None)


# -- random instance generators ------------------------------------------------


def random_scores(rng: np.random.Generator, T: int, U: int, V: int, scale: float = 2.0) -> np.ndarray:
    return rng.normal(scale=scale, size=(T, U + 1, V))


def random_labels(rng: np.random.Generator, U: int, V: int) -> list[int]:
    return [int(v) for v in rng.integers(1, V, size=U)]


def random_params(rng: np.random.Generator, H: int, H_A: int, H_L: int, V: int, precision: str = "f64", scale: float = 0.5):
    def draw(shape, name):
        return Tensor.from_array(rng.uniform(-scale, scale, size=shape), precision, name=name)

    jp = JointParams(draw((H, H_A), "W_A"), draw((H, H_L), "W_L"), draw((H,), "b_Z"))
    op = OutputParams(draw((V, H), "W_O"), draw((V,), "b_O"))
    return jp, op


def random_batch(rng: np.random.Generator, B: int, T: int, U: int, H_A: int, H_L: int, V: int, precision: str = "f64"):
    """Ragged batch with at least one full-length sample."""
    t_len = rng.integers(1, T + 1, size=B)
    u_len = rng.integers(0, U + 1, size=B)
    t_len[0], u_len[0] = T, U
    h_A = rng.normal(size=(B, T, H_A))
    h_L = rng.normal(size=(B, U + 1, H_L))
    labels = rng.integers(1, V, size=(B, U))
    return make_batch(h_A, h_L, labels, t_len, u_len, precision)


# -- suites ---------------------------------------------------------------------


def _loss_fd_case(rng, T, U, V, grad_fn):
    h = random_scores(rng, T, U, V)
    y = random_labels(rng, U, V)

    def f(x):
        L, dh = loss_mod.transducer_loss_sample(Tensor.from_array(x, "f64"), y)
        dh.free()
        return L

    ht = Tensor.from_array(h, "f64")
    log_den = loss_mod.log_denominator(ht)
    alpha, beta = loss_mod.forward_backward(ht, log_den, y)
    dh = grad_fn(ht, log_den, alpha, beta, y)
    analytic = dh.data.copy()
    free(ht, log_den, alpha, beta, dh)
    return analytic, oracle.finite_diff(f, h), dict(h=h.tolist(), labels=y)


def suite_loss_oracle(rng, cases: int) -> SuiteResult:
    for i in range(cases):
        T, U, V = int(rng.integers(1, 6)), int(rng.integers(0, 4)), int(rng.integers(2, 5))
        h = random_scores(rng, T, U, V)
        y = random_labels(rng, U, V)
        L, dh = loss_mod.transducer_loss_sample(Tensor.from_array(h, "f64"), y)
        dh.free()
        ref = oracle.enumerate_paths_loss(h, None, y)
        if abs(L - ref) > 1e-9 * max(1.0, abs(ref)):
            return SuiteResult("loss_oracle", False, i + 1, failure=dict(h=h.tolist(), labels=y, loss=L, oracle=ref))
    return SuiteResult("loss_oracle", True, cases)


def suite_finite_differences(rng, cases: int, grad_fn: Callable | None = None) -> SuiteResult:
    grad_fn = grad_fn or loss_mod.loss_gradient
    for i in range(cases):
        T, U, V = int(rng.integers(1, 4)), int(rng.integers(0, 3)), int(rng.integers(2, 5))
        analytic, numeric, case = _loss_fd_case(rng, T, U, V, grad_fn)
        if np.any(np.abs(analytic - numeric) > oracle.fd_tolerance(numeric)):
            case.update(stage="loss_gradient", max_error=float(np.abs(analytic - numeric).max()))
            return SuiteResult("finite_differences", False, i + 1, failure=case)
        bad = check_layer_gradients(rng)
        if bad is not None:
            return SuiteResult("finite_differences", False, i + 1, failure=bad)
    return SuiteResult("finite_differences", True, cases)


def check_layer_gradients(rng, T=None, U=None, H=None, HA=None, V=None) -> dict | None:
    """Finite-difference check of output_backward and joint_backward on one random instance.

    Returns ``None`` on agreement, otherwise a description of the first mismatch.
    """
    T = T or int(rng.integers(1, 4))
    U = U if U is not None else int(rng.integers(0, 3))
    H = H or int(rng.integers(1, 5))
    HA = HA or int(rng.integers(1, 4))
    V = V or int(rng.integers(2, 5))
    jp, op = random_params(rng, H, HA, HA, V)
    h_A = rng.normal(size=(T, HA))
    h_L = rng.normal(size=(U + 1, HA))
    z_np = np.tanh(rng.normal(size=(T, U + 1, H)))
    dh_np = rng.normal(size=(T, U + 1, V))
    dz_np = rng.normal(size=(T, U + 1, H))

    z = Tensor.from_array(z_np, "f64")
    dh = Tensor.from_array(dh_np, "f64")
    dz, dW_O, db_O = compute.output_backward(dh, z, op)

    def out_probe(z_arr=z_np, W=op.W_O.data, b=op.b_O.data):
        return float(np.sum(dh_np * (z_arr @ W.T + b)))

    checks = [
        ("output_backward.dz", dz.data, oracle.finite_diff(lambda x: out_probe(z_arr=x), z_np)),
        ("output_backward.dW_O", dW_O.data, oracle.finite_diff(lambda x: out_probe(W=x), op.W_O.data)),
        ("output_backward.db_O", db_O.data, oracle.finite_diff(lambda x: out_probe(b=x), op.b_O.data)),
    ]

    enc = SampleEncodings(Tensor.from_array(h_A, "f64"), Tensor.from_array(h_L, "f64"))
    zf = compute.joint_forward(enc, jp)
    dzt = Tensor.from_array(dz_np, "f64")
    grads = compute.joint_backward(dzt, zf, enc, jp)

    def joint_probe(hA=h_A, hL=h_L, WA=jp.W_A.data, WL=jp.W_L.data, bZ=jp.b_Z.data):
        zz = np.tanh((hA @ WA.T)[:, None, :] + (hL @ WL.T)[None, :, :] + bZ)
        return float(np.sum(dz_np * zz))

    names = ("dh_A", "dh_L", "dW_A", "dW_L", "db_Z")
    numerics = (
        oracle.finite_diff(lambda x: joint_probe(hA=x), h_A),
        oracle.finite_diff(lambda x: joint_probe(hL=x), h_L),
        oracle.finite_diff(lambda x: joint_probe(WA=x), jp.W_A.data),
        oracle.finite_diff(lambda x: joint_probe(WL=x), jp.W_L.data),
        oracle.finite_diff(lambda x: joint_probe(bZ=x), jp.b_Z.data),
    )
    checks += [(f"joint_backward.{n}", g.data, num) for n, g, num in zip(names, grads, numerics)]

    failure = None
    for name, analytic, numeric in checks:
        err = np.abs(analytic - numeric)
        if np.any(err > oracle.fd_tolerance(numeric)):
            failure = dict(stage=name, max_error=float(err.max()), T=T, U=U, H=H, H_A=HA, V=V)
            break
    free(z, dh, dz, dW_O, db_O, enc.h_A, enc.h_L, zf, dzt, *grads, *jp.tensors(), *op.tensors())
    return failure


def suite_engine_equivalence(rng, cases: int) -> SuiteResult:
    for i in range(cases):
        dims = dict(
            B=int(rng.integers(1, 9)), T=int(rng.integers(1, 13)), U=int(rng.integers(0, 6)),
            H=int(rng.integers(1, 9)), H_A=int(rng.integers(1, 9)), H_L=int(rng.integers(1, 9)),
            V=int(rng.integers(2, 7)),
        )
        seed = int(rng.integers(2**32))
        for precision, tol in (("f64", 1e-10), ("f32", 2e-4)):
            errors = engine_equivalence_case(seed, precision=precision, **dims)
            worst = max(errors.values())
            if worst > tol:
                return SuiteResult("engine_equivalence", False, i + 1,
                                   failure=dict(seed=seed, precision=precision, errors=errors, **dims))
    return SuiteResult("engine_equivalence", True, cases)


def engine_equivalence_case(seed, B, T, U, H, H_A, H_L, V, precision="f64", worker_count=3) -> dict[str, float]:
    """Worst relative error of each sample-wise mode against batched, keyed by mode."""
    rng = np.random.default_rng(seed)
    batch = random_batch(rng, B, T, U, H_A, H_L, V, precision)
    jp, op = random_params(rng, H, H_A, H_L, V, precision)
    ref = run(batch, jp, op, EngineConfig(mode="batched"))
    errors = {}
    for mode in MODES[1:]:
        res = run(batch, jp, op, EngineConfig(mode=mode, worker_count=worker_count))
        errors[mode] = max(compare_results(res, ref).values())
        res[1].free()
    ref[1].free()
    free(*batch.tensors(), *jp.tensors(), *op.tensors())
    return errors


def suite_memory_release(rng, cases: int) -> SuiteResult:
    for i in range(cases):
        tracker = AllocationTracker()
        with use_tracker(tracker):
            batch = random_batch(rng, 4, 7, 3, 5, 4, 6)
            jp, op = random_params(rng, 6, 5, 4, 6)
            inputs = sum(t.nbytes for t in (*batch.tensors(), *jp.tensors(), *op.tensors()))
            for mode in MODES:
                _, grads = run(batch, jp, op, EngineConfig(mode=mode, worker_count=2))
                outputs = sum(t.nbytes for t in grads.tensors())
                live = tracker.live_bytes
                grads.free()
                if live != inputs + outputs:
                    return SuiteResult("memory_release", False, i + 1,
                                       failure=dict(mode=mode, live=live, expected=inputs + outputs))
    return SuiteResult("memory_release", True, cases)


def memory_scaling_peaks(batch_sizes=(1, 4, 16, 64), T=50, U=10, H=64, V=128, H_A=64, H_L=64, modes=MODES, seed=0):
    """Tracker peak of one engine step per (mode, B), on synthesized bench inputs."""
    peaks = {m: {} for m in modes}
    for B in batch_sizes:
        cfg = BenchConfig(B=B, T=T, U=U, H=H, H_A=H_A, H_L=H_L, V=V, seed=seed)
        for mode in modes:
            tracker = AllocationTracker()
            with use_tracker(tracker):
                batch, jp, op = synth_inputs(cfg)
                tracker.reset()
                _, grads = run(batch, jp, op, EngineConfig(mode=mode))
                peaks[mode][B] = tracker.peak_bytes
                grads.free()
                free(*batch.tensors(), *jp.tensors(), *op.tensors())
    return peaks


def suite_memory_scaling(rng, cases: int) -> SuiteResult:
    dims = dict(T=50, U=10, H=64, V=128, H_A=64, H_L=64)
    peaks = memory_scaling_peaks(modes=("batched", "sample_wise"), **dims)
    per3d = per_sample_3d_bytes(dims["T"], dims["U"], dims["H_A"], dims["H_L"])
    per4d = per_sample_4d_bytes(dims["T"], dims["U"], dims["H"], dims["V"])
    sw, bt = peaks["sample_wise"], peaks["batched"]
    for B in sw:
        if sw[B] > sw[1] + 1.1 * (B - 1) * per3d or bt[B] < 0.8 * B * per4d:
            return SuiteResult("memory_scaling", False, 1, failure=dict(B=B, peaks={m: p for m, p in peaks.items()}))
    return SuiteResult("memory_scaling", True, len(sw))


def verify(scale: str = "small", grad_fn: Callable | None = None, out=None) -> int:
    """Run every suite at ``scale``; print one line per suite. Returns the exit code."""
    out = out or sys.stdout
    params = SCALES[scale]
    rng = np.random.default_rng(params["seed"])
    suites = [
        ("loss_oracle", lambda: suite_loss_oracle(rng, params["loss_cases"])),
        ("finite_differences", lambda: suite_finite_differences(rng, params["fd_cases"], grad_fn)),
        ("engine_equivalence", lambda: suite_engine_equivalence(rng, params["engine_cases"])),
        ("memory_release", lambda: suite_memory_release(rng, 3)),
    ]
    if scale == "medium":
        suites.append(("memory_scaling", lambda: suite_memory_scaling(rng, 1)))

    first_failure = None
    for name, fn in suites:
        start = time.perf_counter()
        result = fn()
        result.seconds = time.perf_counter() - start
        status = "PASS" if result.passed else "FAIL"
        print(f"{name:<20} {status}  cases={result.cases}  {result.seconds:.2f}s", file=out)
        if not result.passed and first_failure is None:
            first_failure = result
    if first_failure is not None:
        print(f"first failing case ({first_failure.name}):", file=out)
        print(json.dumps(first_failure.failure, default=str), file=out)
        return 1
    return 0
