"""Normalized physicists' Hermite polynomials and Hermite functions.

``h_j`` is orthonormal under the weight ``exp(-t^2)``. Values come from the
normalized three-term recurrence

    h_{j+1}(t) = t sqrt(2/(j+1)) h_j(t) - sqrt(j/(j+1)) h_{j-1}(t)

so raw ``H_j`` and factorials are never formed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegreeOutOfRangeError
from .kernels import hermite_table

MAX_DEGREE = 20


def _check_degree(j):
    if not 0 <= j <= MAX_DEGREE:
        raise DegreeOutOfRangeError(f"degree {j} outside [0, {MAX_DEGREE}]")


@dataclass(frozen=True)
class BasisSpec:
    max_degree: int = 8

    def __post_init__(self):
        _check_degree(self.max_degree)

    @property
    def size(self) -> int:
        return self.max_degree + 1


def eval_normalized_hermite(j: int, t: float) -> float:
    _check_degree(j)
    return float(hermite_table(t, j)[0, j])


def eval_hermite_function(j: int, t: float) -> float:
    """``h_j(t) * exp(-t^2/2)``; underflows to 0 instead of overflowing."""
    _check_degree(j)
    return float(hermite_table(t, j, weighted=True)[0, j])


def eval_basis_row(spec: BasisSpec, t: float) -> np.ndarray:
    return hermite_table(t, spec.max_degree)[0]


def basis_matrix(spec: BasisSpec, t, weighted: bool = True) -> np.ndarray:
    """Basis rows for an array of times, shape ``(len(t), J + 1)``."""
    return hermite_table(np.asarray(t, dtype=np.float64).ravel(), spec.max_degree, weighted)

