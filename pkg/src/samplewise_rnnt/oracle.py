"""Brute-force and numerical oracles for checking the loss and the backward passes.

These stay deliberately naive: the loss oracle walks every monotone alignment
explicitly and shares no code with the lattice recursion.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import InstanceTooLargeError, InvalidInputError

MAX_PATHS = 10**6
BLANK = 0


@dataclass(frozen=True)
class AlignmentPath:
    """Ordered ``(t, u, token)`` emissions from (0, 0) to the terminal blank."""

    steps: tuple[tuple[int, int, int], ...]


def count_paths(T_b: int, U_b: int) -> int:
    if T_b < 1 or U_b < 0:
        raise InvalidInputError(f"need T_b >= 1 and U_b >= 0, got ({T_b}, {U_b})")
    return math.comb(T_b + U_b - 1, U_b)


def enumerate_paths(T_b: int, U_b: int, labels: Sequence[int]) -> Iterator[AlignmentPath]:
    """Every alignment of ``U_b`` labels to ``T_b`` frames.

    The final step is always blank at ``(T_b - 1, U_b)``; the preceding
    ``T_b + U_b - 1`` steps hold ``T_b - 1`` blanks and ``U_b`` labels in any order.
    """
    n = count_paths(T_b, U_b)
    if n > MAX_PATHS:
        raise InstanceTooLargeError(f"{n} alignments exceed the enumeration guard of {MAX_PATHS}")
    free_steps = T_b + U_b - 1
    for label_slots in itertools.combinations(range(free_steps), U_b):
        slots = set(label_slots)
        t = u = 0
        steps = []
        for i in range(free_steps):
            if i in slots:
                steps.append((t, u, int(labels[u])))
                u += 1
            else:
                steps.append((t, u, BLANK))
                t += 1
        steps.append((t, u, BLANK))
        yield AlignmentPath(tuple(steps))


def path_log_probs(h, log_den, labels: Sequence[int], t_len: int | None = None) -> list[float]:
    """Log probability of every alignment, in enumeration order."""
    h = np.asarray(getattr(h, "data", h), dtype=np.float64)
    log_den = np.asarray(getattr(log_den, "data", log_den), dtype=np.float64)
    T_b = h.shape[0] if t_len is None else int(t_len)
    U_b = len(labels)
    out = []
    for path in enumerate_paths(T_b, U_b, labels):
        out.append(math.fsum(h[t, u, k] - log_den[t, u] for t, u, k in path.steps))
    return out


def log_sum(values: Sequence[float]) -> float:
    """``ln sum(exp(values))`` with a max shift and an exactly rounded sum."""
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def enumerate_paths_loss(h, log_den, labels: Sequence[int], t_len: int | None = None) -> float:
    """Exact loss ``-ln sum_paths prod_steps p(token | t, u)`` by enumeration.

    Pass ``log_den=None`` to use a direct high-precision log-sum-exp of ``h``.
    """
    h = np.asarray(getattr(h, "data", h), dtype=np.float64)
    if log_den is None:
        log_den = log_denominator_reference(h)
    return -log_sum(path_log_probs(h, log_den, labels, t_len))


def log_denominator_reference(h) -> np.ndarray:
    """Log softmax denominator evaluated cell by cell with ``math.fsum``."""
    h = np.asarray(getattr(h, "data", h), dtype=np.float64)
    flat = h.reshape(-1, h.shape[-1])
    out = np.array([log_sum(list(row)) for row in flat])
    return out.reshape(h.shape[:-1])


def uniform_loss(T_b: int, U_b: int, V: int) -> float:
    """Closed-form loss when every token has probability ``1/V`` at every node."""
    return (T_b + U_b) * math.log(V) - math.log(count_paths(T_b, U_b))


def finite_diff(fn: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x``, in float64.

    ``x`` is not modified; ``fn`` receives a perturbed copy.
    """
    x = np.array(getattr(x, "data", x), dtype=np.float64)
    grad = np.empty_like(x)
    probe = x.copy()
    for idx in np.ndindex(x.shape):
        orig = probe[idx]
        probe[idx] = orig + eps
        f_plus = fn(probe.copy())
        probe[idx] = orig - eps
        f_minus = fn(probe.copy())
        probe[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * eps)
    return grad


def fd_tolerance(g: np.ndarray, rel: float = 1e-6, floor: float = 1e-8) -> np.ndarray:
    return np.maximum(rel * np.abs(g), floor)
