"""Gauss-Legendre rules and the [0, t] antiderivative transform."""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, QuadratureError

MAX_ORDER = 64
_RESIDUAL_TOL = 1e-14
# |P_n| near a root bottoms out at ~eps*|P_n'|, which exceeds the residual
# tolerance for larger n; a step below this floor counts as converged.
_STEP_TOL = 1e-15
_MAX_NEWTON = 100
_POLISH_STEPS = 2


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes ``r_1 < ... < r_n`` in (-1, 1) and positive weights."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def top_node(self) -> float:
        return float(self.nodes[-1])


def _legendre(n, x):
    """``P_n(x)`` and ``P_n'(x)`` by the Bonnet recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    if n == 0:
        p = p_prev
    dp = n * (x * p - p_prev) / (x * x - 1.0) if n > 0 else np.zeros_like(x)
    return p, dp


@lru_cache(maxsize=None)
def build_rule(order: int) -> QuadratureRule:
    """Newton iteration on ``P_order`` started from the Chebyshev points."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise QuadratureError(f"quadrature order must be in [1, {MAX_ORDER}], got {order!r}")
    n = int(order)
    k = np.arange(1, n + 1)
    x = -np.cos((2 * k - 1) * math.pi / (2 * n))
    for _ in range(_MAX_NEWTON):
        p, dp = _legendre(n, x)
        step = p / dp
        x = x - step
        p, _ = _legendre(n, x)
        if np.all((np.abs(p) < _RESIDUAL_TOL) | (np.abs(step) < _STEP_TOL)):
            break
    else:
        raise QuadratureError(f"Newton iteration for order {n} did not converge")

    # polish and weigh in extended precision where the platform has it, so
    # the float64 results come out correctly rounded instead of ~n*eps off
    x = np.sort(x).astype(np.longdouble)
    for _ in range(_POLISH_STEPS):
        p, dp = _legendre(n, x)
        x = x - p / dp
    # exact mirror symmetry; the middle node of an odd rule is exactly 0
    x = 0.5 * (x - x[::-1])
    _, dp = _legendre(n, x)
    w = 2.0 / ((1.0 - x) * (1.0 + x) * dp * dp)
    w = 0.5 * (w + w[::-1])
    x, w = x.astype(np.float64), w.astype(np.float64)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(n, x, w)


def antiderivative_at(rule: QuadratureRule, f, t: float) -> float:
    """Approximate ``int_0^t f(u) du``; ``f`` is called once on the array of
    mapped nodes and may return a scalar."""
    t = float(t)
    if t < 0 or not math.isfinite(t):
        raise DomainError(f"antiderivative needs a finite t >= 0, got {t}")
    half = 0.5 * t
    u = half * (rule.nodes + 1.0)
    vals = np.broadcast_to(np.asarray(f(u), dtype=np.float64), u.shape)
    return half * float(np.dot(rule.weights, vals))
