"""Transducer loss in four stages: log softmax denominator, forward/backward
lattices, loss value and output-score gradients.

Notation: ``lp(k | t, u) = h[t, u, k] - log_den[t, u]`` is the log probability
of emitting token ``k`` at lattice node ``(t, u)``. Blank is token 0. A
sample's lattice spans ``T_b`` frames and ``U_b + 1`` label positions, where
``U_b = len(labels)``; ``h`` may be larger (padded) and only its leading
``[T_b, U_b + 1]`` block is read.

Probabilities are never materialized as a ``[T, U+1, V]`` tensor: the
gradient kernel writes ``exp(h - log_den)`` straight into ``dh``.

The lattices are accumulated in float64 whatever the precision of ``h``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidShapeError, NumericalDegeneracyError
from .tensor import Tensor, alloc, free, logsumexp_last

BLANK = 0


def check_labels(labels: Sequence[int], V: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= V):
        raise InvalidInputError(f"labels must lie in [0, {V}), got {y.tolist()}")
    if np.any(y == BLANK):
        raise InvalidInputError(f"labels must not contain the blank id {BLANK}")
    return y


def _lattice_extent(h: np.ndarray, y: np.ndarray, t_len: int | None) -> tuple[int, int]:
    T_b = h.shape[0] if t_len is None else int(t_len)
    U_b = len(y)
    if T_b < 1:
        raise InvalidInputError(f"need at least one frame, got T_b={T_b}")
    if T_b > h.shape[0] or U_b + 1 > h.shape[1]:
        raise InvalidShapeError(f"lattice [{T_b}, {U_b + 1}] does not fit scores of shape {h.shape}")
    return T_b, U_b


# -- array kernels ------------------------------------------------------------
# These operate on ndarray views so the batched path can run them on slices
# of one padded tensor without copying.


def _emission_logprobs(h, log_den, y, T_b, U_b):
    ld = log_den[:T_b, : U_b + 1].astype(np.float64)
    lp_blank = h[:T_b, : U_b + 1, BLANK] - ld
    lp_label = h[:T_b, np.arange(U_b), y] - ld[:, :U_b]
    return lp_blank, lp_label


def _fill_lattices(lp_blank, lp_label, alpha, beta):
    """Row-by-row alpha/beta over one sample's lattice (written into views).

    Within a row the label-direction recurrence
    ``a[u] = logaddexp(above[u], a[u-1] + e[u-1])`` is a linear scan in the
    log semiring. With ``C[u] = sum(e[:u])`` it unrolls to
    ``a[u] = C[u] + logcumsumexp(above - C)[u]``, evaluated with
    ``np.logaddexp.accumulate``. ``beta`` uses the mirrored reverse scan.
    """
    T_b, U1 = lp_blank.shape
    C = np.zeros((T_b, U1))
    np.cumsum(lp_label, axis=1, out=C[:, 1:])

    above = np.full(U1, -np.inf)
    above[0] = 0.0
    for t in range(T_b):
        if t > 0:
            above = alpha[t - 1] + lp_blank[t - 1]
        alpha[t] = C[t] + np.logaddexp.accumulate(above - C[t])

    below = np.full(U1, -np.inf)
    below[-1] = lp_blank[T_b - 1, U1 - 1]
    for t in range(T_b - 1, -1, -1):
        if t < T_b - 1:
            below = lp_blank[t] + beta[t + 1]
        beta[t] = np.logaddexp.accumulate((below + C[t])[::-1])[::-1] - C[t]


def _fill_gradient(h, log_den, y, alpha, beta, dh, T_b, U_b):
    """Write ``dL/dh`` for one sample into the view ``dh[:T_b, :U_b+1]``."""
    lp_blank, lp_label = _emission_logprobs(h, log_den, y, T_b, U_b)
    a = alpha[:T_b, : U_b + 1]
    b = beta[:T_b, : U_b + 1]
    log_z = b[0, 0]
    if not np.isfinite(log_z):
        raise NumericalDegeneracyError(f"total log-probability is {log_z}")

    out = dh[:T_b, : U_b + 1]
    np.subtract(h[:T_b, : U_b + 1], log_den[:T_b, : U_b + 1, None], out=out)
    np.exp(out, out=out)
    out *= np.exp(a + b - log_z)[..., None]

    # blank edge goes to (t+1, u); the terminal blank at (T_b-1, U_b) ends the path
    blank_dest = np.full((T_b, U_b + 1), -np.inf)
    blank_dest[:-1] = b[1:]
    blank_dest[-1, -1] = 0.0
    out[:, :, BLANK] -= np.exp(a + lp_blank + blank_dest - log_z)
    if U_b:
        out[:, np.arange(U_b), y] -= np.exp(a[:, :U_b] + lp_label + b[:, 1:] - log_z)
    if not np.isfinite(out).all():
        raise NumericalDegeneracyError("non-finite value in output-score gradient")


def _lattice_tensors(shape, name_prefix=""):
    alpha = alloc(shape, "f64", name=f"{name_prefix}alpha")
    try:
        beta = alloc(shape, "f64", name=f"{name_prefix}beta")
    except BaseException:
        alpha.free()
        raise
    alpha.data.fill(-np.inf)
    beta.data.fill(-np.inf)
    return alpha, beta


# -- public per-sample ops ----------------------------------------------------


def log_denominator(h: Tensor) -> Tensor:
    """Log of the softmax denominator over the vocabulary axis, ``[..., T, U+1]``."""
    if h.shape[-1] < 2:
        raise InvalidShapeError(f"vocabulary must have at least 2 entries, got {h.shape[-1]}")
    return logsumexp_last(h, name="log_den")


def forward_backward(h: Tensor, log_den: Tensor, labels: Sequence[int], t_len: int | None = None) -> tuple[Tensor, Tensor]:
    """Forward and backward log-variables of one sample.

    Returns ``(alpha, beta)`` with the shape of ``log_den``. Cells outside the
    ``[T_b, U_b + 1]`` lattice hold ``-inf``. ``beta[0, 0]`` is the total log
    probability of the label sequence.
    """
    if len(h.shape) != 3 or log_den.shape != h.shape[:-1]:
        raise InvalidShapeError(f"expected h [T, U+1, V] and log_den [T, U+1], got {h.shape}, {log_den.shape}")
    y = check_labels(labels, h.shape[-1])
    T_b, U_b = _lattice_extent(h.data, y, t_len)
    alpha, beta = _lattice_tensors(log_den.shape)
    lp_blank, lp_label = _emission_logprobs(h.data, log_den.data, y, T_b, U_b)
    _fill_lattices(lp_blank, lp_label, alpha.data[:T_b, : U_b + 1], beta.data[:T_b, : U_b + 1])
    return alpha, beta


def loss_value(beta: Tensor) -> float:
    """Negative log-likelihood ``-beta[0, 0]``."""
    log_z = float(beta.data[(0,) * len(beta.shape)])
    if not np.isfinite(log_z):
        raise NumericalDegeneracyError(f"no valid alignment: log-probability is {log_z}")
    return -log_z


def loss_gradient(h: Tensor, log_den: Tensor, alpha: Tensor, beta: Tensor, labels: Sequence[int], t_len: int | None = None) -> Tensor:
    """Gradient of the loss with respect to the output scores, shape of ``h``.

    For a node (t, u) with occupancy ``exp(alpha + beta - logZ)``::

        dh[t,u,k] = occupancy * softmax(k | t,u)
                    - [k = blank] * exp(alpha + lp(blank) + beta(t+1,u) - logZ)
                    - [k = y_{u+1}] * exp(alpha + lp(y_{u+1}) + beta(t,u+1) - logZ)

    Entries outside the sample's lattice are zero.
    """
    y = check_labels(labels, h.shape[-1])
    T_b, U_b = _lattice_extent(h.data, y, t_len)
    dh = alloc(h.shape, h.precision, name="dh")
    try:
        _fill_gradient(h.data, log_den.data, y, alpha.data, beta.data, dh.data, T_b, U_b)
    except BaseException:
        dh.free()
        raise
    return dh


def transducer_loss_sample(h: Tensor, labels: Sequence[int], t_len: int | None = None) -> tuple[float, Tensor]:
    """Loss and ``dL/dh`` for a single sample with scores ``h [T, U+1, V]``."""
    log_den = log_denominator(h)
    alpha = beta = None
    try:
        alpha, beta = forward_backward(h, log_den, labels, t_len)
        loss = loss_value(beta)
        dh = loss_gradient(h, log_den, alpha, beta, labels, t_len)
    finally:
        free(log_den, alpha, beta)
    return loss, dh


def transducer_loss_batch(h: Tensor, labels: np.ndarray, t_len: Sequence[int], u_len: Sequence[int]) -> tuple[list[float], Tensor]:
    """Per-sample losses and ``dL/dh`` for padded scores ``h [B, T, U+1, V]``.

    The softmax denominator and the lattices are computed over the full padded
    extents; each sample's recursion and gradient only touch its own
    ``[T_b, U_b + 1]`` block. ``dh`` is zero everywhere else.
    """
    if len(h.shape) != 4:
        raise InvalidShapeError(f"expected h [B, T, U+1, V], got {h.shape}")
    B, V = h.shape[0], h.shape[-1]
    log_den = log_denominator(h)
    alpha = beta = dh = None
    losses = []
    try:
        alpha, beta = _lattice_tensors(log_den.shape)
        dh = alloc(h.shape, h.precision, name="dh")
        for b in range(B):
            y = check_labels(labels[b][: u_len[b]], V)
            T_b, U_b = _lattice_extent(h.data[b], y, t_len[b])
            a = alpha.data[b, :T_b, : U_b + 1]
            be = beta.data[b, :T_b, : U_b + 1]
            _fill_lattices(*_emission_logprobs(h.data[b], log_den.data[b], y, T_b, U_b), a, be)
            losses.append(-float(be[0, 0]))
            _fill_gradient(h.data[b], log_den.data[b], y, alpha.data[b], beta.data[b], dh.data[b], T_b, U_b)
    except BaseException:
        free(dh)
        raise
    finally:
        free(log_den, alpha, beta)
    return losses, dh
