"""Discrete fractional integral and derivative operators (Grünwald–Letnikov).

A derivative of order ``b`` is approximated by

    D^b e(t_k) ~ dt**-b * sum_j w_j(b) e(t_k - j dt)

and an integral of order ``a`` by the same sum with weights of order ``-a``
scaled by ``dt**a``.  The history is truncated to the last ``memory_len``
samples (short-memory principle) and starts from zero.

History is kept in a buffer of length ``2 * memory_len`` where every sample
is written twice, so the last ``memory_len`` samples are always one
contiguous slice and the convolution is a single dot product.
"""

from __future__ import annotations

import math

import numpy as np

from ._jit import njit
from .errors import InvalidArgumentError

DEFAULT_MEMORY_LEN = 4096

INTEGRAL = "integral"
DERIVATIVE = "derivative"


@njit
def _gl_weights(order, n):
    w = np.empty(n)
    w[0] = 1.0
    for j in range(1, n):
        w[j] = w[j - 1] * (1.0 - (order + 1.0) / j)
    return w


@njit
def _gl_push(buf, ptr, x):
    """Append ``x``; ``ptr`` holds ``[write position, sample count]``."""
    m = buf.shape[0] // 2
    pos = ptr[0] + 1
    if pos == m:
        pos = 0
    buf[pos] = x
    buf[pos + m] = x
    ptr[0] = pos
    if ptr[1] < m:
        ptr[1] += 1


@njit
def _gl_set_newest(buf, ptr, x):
    m = buf.shape[0] // 2
    buf[ptr[0]] = x
    buf[ptr[0] + m] = x


@njit
def _gl_eval(wrev, buf, ptr):
    """Weighted sum over the stored history, newest sample paired with w_0."""
    m = wrev.shape[0]
    c = ptr[1]
    start = ptr[0] + 1
    window = buf[start:start + m]
    return np.dot(wrev[m - c:], window[m - c:])


def gl_coefficients(order: float, n: int) -> np.ndarray:
    """First ``n`` Grünwald–Letnikov binomial weights for ``order``.

    Negative orders give integral weights, which are all non-negative.
    """
    if n < 1:
        raise InvalidArgumentError(f"need at least one coefficient, got n={n}")
    return _gl_weights(float(order), int(n))


class FracOperator:
    """Stateful fractional integral (``s**-order``) or derivative (``s**order``)."""

    def __init__(self, order: float, kind: str, dt: float, memory_len: int = DEFAULT_MEMORY_LEN):
        if kind not in (INTEGRAL, DERIVATIVE):
            raise InvalidArgumentError(f"kind must be {INTEGRAL!r} or {DERIVATIVE!r}, got {kind!r}")
        if not 0 < order < 2:
            raise InvalidArgumentError(f"fractional order must lie in (0, 2), got {order!r}")
        if not (math.isfinite(dt) and dt > 0):
            raise InvalidArgumentError(f"dt must be > 0, got {dt!r}")
        if memory_len < 1:
            raise InvalidArgumentError(f"memory_len must be >= 1, got {memory_len!r}")
        self.order = float(order)
        self.kind = kind
        self.dt = float(dt)
        self.memory_len = int(memory_len)
        signed = self.order if kind == DERIVATIVE else -self.order
        self.coeff_cache = gl_coefficients(signed, self.memory_len)
        self.scale = self.dt ** (-self.order) if kind == DERIVATIVE else self.dt ** self.order
        self._wrev = np.ascontiguousarray(self.coeff_cache[::-1])
        self._buf = np.zeros(2 * self.memory_len)
        self._ptr = np.array([self.memory_len - 1, 0], dtype=np.int64)

    def apply(self, sample: float) -> float:
        _gl_push(self._buf, self._ptr, float(sample))
        return self.scale * _gl_eval(self._wrev, self._buf, self._ptr)

    def value(self) -> float:
        """Current output without consuming a new sample."""
        return self.scale * _gl_eval(self._wrev, self._buf, self._ptr)

    def replace_last(self, sample: float) -> float:
        """Overwrite the newest stored sample and return the corrected output."""
        if self._ptr[1] == 0:
            raise InvalidArgumentError("operator has no history to replace")
        _gl_set_newest(self._buf, self._ptr, float(sample))
        return self.value()

    def reset(self) -> "FracOperator":
        self._buf[:] = 0.0
        self._ptr[0] = self.memory_len - 1
        self._ptr[1] = 0
        return self

    @property
    def history(self) -> np.ndarray:
        """Stored samples, oldest first."""
        m, c = self.memory_len, int(self._ptr[1])
        start = int(self._ptr[0]) + 1
        return self._buf[start + m - c:start + m].copy()

    def __repr__(self):
        return (f"FracOperator(order={self.order}, kind={self.kind!r}, dt={self.dt}, "
                f"memory_len={self.memory_len})")
