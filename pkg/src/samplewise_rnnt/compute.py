"""Joint network and output layer, forward and backward.

All functions accept either a single sample (``h_A`` of shape ``[T, H_A]``)
or a batch (``[B, T, H_A]``); the leading batch axis is carried through.
Every result is a freshly allocated, tracked :class:`Tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidShapeError
from .tensor import Tensor, alloc, free


@dataclass
class JointParams:
    W_A: Tensor  # [H, H_A]
    W_L: Tensor  # [H, H_L]
    b_Z: Tensor  # [H]

    def __post_init__(self):
        H = self.W_A.shape[0]
        if len(self.W_A.shape) != 2 or len(self.W_L.shape) != 2 or self.W_L.shape[0] != H or self.b_Z.shape != (H,):
            raise InvalidShapeError(
                f"inconsistent joint params: W_A {self.W_A.shape}, W_L {self.W_L.shape}, b_Z {self.b_Z.shape}"
            )

    @property
    def H(self) -> int:
        return self.W_A.shape[0]

    @property
    def H_A(self) -> int:
        return self.W_A.shape[1]

    @property
    def H_L(self) -> int:
        return self.W_L.shape[1]

    @property
    def precision(self) -> str:
        return self.W_A.precision

    def tensors(self) -> list[Tensor]:
        return [self.W_A, self.W_L, self.b_Z]


@dataclass
class OutputParams:
    W_O: Tensor  # [V, H]
    b_O: Tensor  # [V]

    def __post_init__(self):
        if len(self.W_O.shape) != 2 or self.b_O.shape != (self.W_O.shape[0],):
            raise InvalidShapeError(f"inconsistent output params: W_O {self.W_O.shape}, b_O {self.b_O.shape}")

    @property
    def V(self) -> int:
        return self.W_O.shape[0]

    @property
    def H(self) -> int:
        return self.W_O.shape[1]

    @property
    def precision(self) -> str:
        return self.W_O.precision

    def tensors(self) -> list[Tensor]:
        return [self.W_O, self.b_O]


@dataclass
class SampleEncodings:
    """Acoustic and label encodings of one sample (or a batch of them).

    ``h_L`` always has at least one row: the row for the prepended blank.
    """

    h_A: Tensor  # [..., T, H_A]
    h_L: Tensor  # [..., U+1, H_L]


def init_params(H: int, H_A: int, H_L: int, V: int, rng: np.random.Generator, precision: str = "f32", scale: float = 0.1):
    """Uniform ``[-scale, scale]`` weights and biases from ``rng``."""

    def draw(shape, name):
        return Tensor.from_array(rng.uniform(-scale, scale, size=shape), precision, name=name)

    jp = JointParams(draw((H, H_A), "W_A"), draw((H, H_L), "W_L"), draw((H,), "b_Z"))
    op = OutputParams(draw((V, H), "W_O"), draw((V,), "b_O"))
    return jp, op


def _check_encodings(enc: SampleEncodings, jp: JointParams):
    a, l = enc.h_A.shape, enc.h_L.shape
    if len(a) != len(l) or len(a) not in (2, 3):
        raise InvalidShapeError(f"h_A {a} and h_L {l} must both be rank 2 or both rank 3")
    if a[:-2] != l[:-2]:
        raise InvalidShapeError(f"batch extents differ: h_A {a}, h_L {l}")
    if a[-1] != jp.H_A or l[-1] != jp.H_L:
        raise InvalidShapeError(f"encoding sizes {a[-1]}, {l[-1]} do not match params ({jp.H_A}, {jp.H_L})")
    if enc.h_A.precision != jp.precision or enc.h_L.precision != jp.precision:
        raise InvalidShapeError("encodings and joint params differ in precision")


def joint_forward(enc: SampleEncodings, jp: JointParams) -> Tensor:
    """``z[t, u] = tanh(W_A h_A[t] + W_L h_L[u] + b_Z)``, shape ``[..., T, U+1, H]``.

    Both projections are computed once, as ``[..., T, H]`` and ``[..., U+1, H]``
    intermediates, then broadcast-added into the tracked output.
    """
    _check_encodings(enc, jp)
    lead = enc.h_A.shape[:-2]
    T, U1, H = enc.h_A.shape[-2], enc.h_L.shape[-2], jp.H
    proj_a = alloc([*lead, T, H], jp.precision, name="proj_A")
    proj_l = alloc([*lead, U1, H], jp.precision, name="proj_L")
    try:
        np.matmul(enc.h_A.data, jp.W_A.data.T, out=proj_a.data)
        proj_a.data += jp.b_Z.data
        np.matmul(enc.h_L.data, jp.W_L.data.T, out=proj_l.data)
        z = alloc([*lead, T, U1, H], jp.precision, name="z")
        np.add(proj_a.data[..., :, None, :], proj_l.data[..., None, :, :], out=z.data)
        np.tanh(z.data, out=z.data)
    finally:
        free(proj_a, proj_l)
    return z


def output_forward(z: Tensor, op: OutputParams) -> Tensor:
    """``h[t, u] = W_O z[t, u] + b_O``, shape ``[..., T, U+1, V]``."""
    if z.shape[-1] != op.H or z.precision != op.precision:
        raise InvalidShapeError(f"z {z.shape} ({z.precision}) does not match W_O {op.W_O.shape} ({op.precision})")
    V, H = op.V, op.H
    h = alloc([*z.shape[:-1], V], op.precision, name="h")
    np.matmul(z.data.reshape(-1, H), op.W_O.data.T, out=h.data.reshape(-1, V))
    h.data += op.b_O.data
    return h


def output_backward(dh: Tensor, z: Tensor, op: OutputParams) -> tuple[Tensor, Tensor, Tensor]:
    """Backward of :func:`output_forward`.

    Returns ``(dz, dW_O, db_O)``; ``dW_O`` and ``db_O`` are summed over every
    (t, u) cell (and batch entry) of ``dh``.
    """
    V, H = op.V, op.H
    if dh.shape[:-1] != z.shape[:-1] or dh.shape[-1] != V or z.shape[-1] != H:
        raise InvalidShapeError(f"dh {dh.shape} / z {z.shape} inconsistent with W_O {op.W_O.shape}")
    dh2 = dh.data.reshape(-1, V)
    dz = dW_O = db_O = None
    try:
        dz = alloc(z.shape, op.precision, name="dz")
        np.matmul(dh2, op.W_O.data, out=dz.data.reshape(-1, H))
        dW_O = alloc([V, H], op.precision, name="dW_O")
        np.matmul(dh2.T, z.data.reshape(-1, H), out=dW_O.data)
        db_O = alloc([V], op.precision, name="db_O")
        dh2.sum(axis=0, out=db_O.data)
    except BaseException:
        free(dz, dW_O, db_O)
        raise
    return dz, dW_O, db_O


def joint_backward(dz: Tensor, z: Tensor, enc: SampleEncodings, jp: JointParams):
    """Backward of :func:`joint_forward` given the retained forward output ``z``.

    Returns ``(dh_A, dh_L, dW_A, dW_L, db_Z)``.
    """
    _check_encodings(enc, jp)
    if dz.shape != z.shape or z.shape[-1] != jp.H:
        raise InvalidShapeError(f"dz {dz.shape} / z {z.shape} inconsistent with H={jp.H}")
    if z.shape[:-1] != (*enc.h_A.shape[:-1], enc.h_L.shape[-2]):
        raise InvalidShapeError(f"z {z.shape} does not match encodings {enc.h_A.shape}, {enc.h_L.shape}")
    H, prec = jp.H, jp.precision
    lead = z.shape[:-3]
    T, U1 = z.shape[-3], z.shape[-2]

    # gate through tanh: g = dz * (1 - z^2)
    g = alloc(z.shape, prec, name="g")
    g_t = g_u = None
    try:
        np.multiply(z.data, z.data, out=g.data)
        np.subtract(1, g.data, out=g.data)
        g.data *= dz.data
        g_t = alloc([*lead, T, H], prec, name="g_t")
        g.data.sum(axis=-2, out=g_t.data)
        g_u = alloc([*lead, U1, H], prec, name="g_u")
        g.data.sum(axis=-3, out=g_u.data)
    except BaseException:
        free(g, g_t, g_u)
        raise
    g.free()

    dh_A = dh_L = dW_A = dW_L = db_Z = None
    try:
        dh_A = alloc(enc.h_A.shape, prec, name="dh_A")
        np.matmul(g_t.data, jp.W_A.data, out=dh_A.data)
        dh_L = alloc(enc.h_L.shape, prec, name="dh_L")
        np.matmul(g_u.data, jp.W_L.data, out=dh_L.data)
        gt2 = g_t.data.reshape(-1, H)
        dW_A = alloc(jp.W_A.shape, prec, name="dW_A")
        np.matmul(gt2.T, enc.h_A.data.reshape(-1, jp.H_A), out=dW_A.data)
        dW_L = alloc(jp.W_L.shape, prec, name="dW_L")
        np.matmul(g_u.data.reshape(-1, H).T, enc.h_L.data.reshape(-1, jp.H_L), out=dW_L.data)
        db_Z = alloc([H], prec, name="db_Z")
        gt2.sum(axis=0, out=db_Z.data)
    except BaseException:
        free(dh_A, dh_L, dW_A, dW_L, db_Z)
        raise
    finally:
        free(g_t, g_u)
    return dh_A, dh_L, dW_A, dW_L, db_Z
