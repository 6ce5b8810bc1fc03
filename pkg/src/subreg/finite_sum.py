"""Finite-sum objectives of the form f(x) = (1/N) * sum_i f_i(x).

The mean convention makes full-sample and subsampled evaluations directly
comparable.  All reductions run over ascending component indices so that
repeated evaluations are bit-for-bit reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "FiniteSumProblem",
    "CustomProblem",
    "ExactEvaluation",
    "full_value",
    "full_gradient",
    "full_hvp",
    "evaluate",
]


def as_vector(x, n: int, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a float vector of length ``n``, raising on mismatch."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def as_index_set(indices, N: int) -> np.ndarray:
    """Validate and sort a non-empty set of component indices."""
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ValueError("index set must be non-empty")
    if idx.min() < 0 or idx.max() >= N:
        raise ValueError(f"component index out of range [0, {N})")
    return np.sort(idx)


class FiniteSumProblem:
    """Contract for objectives built from N component functions.

    Subclasses set ``n`` (parameter dimension) and ``N`` (component count)
    and implement per-component values and gradients.  Hessian information
    is exposed only through its action on vectors; by default the action is
    a forward difference of component gradients.  Instances must be
    read-only after construction so they can be evaluated concurrently.
    """

    n: int
    N: int

    def component_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def component_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def component_hvp(self, i: int, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.hvp_mean(np.array([i]), x, v)

    # Batched means over an index subset.  The defaults loop over the
    # components; subclasses override them with vectorised code.

    def value_mean(self, indices, x) -> float:
        idx = as_index_set(indices, self.N)
        x = as_vector(x, self.n)
        values = np.array([self.component_value(int(i), x) for i in idx])
        return float(values.sum() / idx.size)

    def gradient_mean(self, indices, x) -> np.ndarray:
        idx = as_index_set(indices, self.N)
        x = as_vector(x, self.n)
        total = np.zeros(self.n)
        for i in idx:
            total += self.component_gradient(int(i), x)
        return total / idx.size

    @property
    def has_exact_hvp(self) -> bool:
        """True when the Hessian action is analytic rather than differenced."""
        return False

    def hvp_step(self, x: np.ndarray, v: np.ndarray) -> float:
        """Forward-difference step balancing truncation against round-off."""
        u = float(np.finfo(float).eps)
        return float(np.sqrt(u)) * (1.0 + float(np.linalg.norm(x))) / max(
            float(np.linalg.norm(v)), u
        )

    def hvp_mean(self, indices, x, v) -> np.ndarray:
        x = as_vector(x, self.n)
        v = as_vector(v, self.n, "v")
        if not v.any():
            return np.zeros(self.n)
        h = self.hvp_step(x, v)
        return (self.gradient_mean(indices, x + h * v) - self.gradient_mean(indices, x)) / h

    def hvp_estimator(self, indices, x) -> Callable[[np.ndarray], np.ndarray]:
        """Hessian action over a fixed index set, reusing the base gradient.

        Each call costs one batched gradient evaluation at a shifted point;
        the gradient at ``x`` itself is computed once up front.
        """
        idx = as_index_set(indices, self.N)
        x = as_vector(x, self.n).copy()
        base = self.gradient_mean(idx, x)

        def action(v: np.ndarray) -> np.ndarray:
            v = as_vector(v, self.n, "v")
            if not v.any():
                return np.zeros(self.n)
            h = self.hvp_step(x, v)
            return (self.gradient_mean(idx, x + h * v) - base) / h

        return action


class CustomProblem(FiniteSumProblem):
    """Finite-sum problem assembled from per-component callables.

    ``value(i, x)`` and ``gradient(i, x)`` are required; ``hvp(i, x, v)`` is
    optional and, when given, replaces the finite-difference Hessian action
    with the exact one.
    """

    def __init__(self, n: int, N: int, value, gradient, hvp=None):
        self.n = int(n)
        self.N = int(N)
        if self.n < 1 or self.N < 1:
            raise ValueError("n and N must be positive")
        self._value = value
        self._gradient = gradient
        self._hvp = hvp

    @property
    def has_exact_hvp(self) -> bool:
        return self._hvp is not None

    def component_value(self, i: int, x) -> float:
        return float(self._value(int(i), as_vector(x, self.n)))

    def component_gradient(self, i: int, x) -> np.ndarray:
        return as_vector(self._gradient(int(i), as_vector(x, self.n)), self.n, "gradient")

    def component_hvp(self, i: int, x, v) -> np.ndarray:
        if self._hvp is None:
            return super().component_hvp(i, x, v)
        x = as_vector(x, self.n)
        v = as_vector(v, self.n, "v")
        return as_vector(self._hvp(int(i), x, v), self.n, "hvp")

    def hvp_mean(self, indices, x, v) -> np.ndarray:
        if self._hvp is None:
            return super().hvp_mean(indices, x, v)
        idx = as_index_set(indices, self.N)
        x = as_vector(x, self.n)
        v = as_vector(v, self.n, "v")
        total = np.zeros(self.n)
        for i in idx:
            total += self._hvp(int(i), x, v)
        return total / idx.size

    def hvp_estimator(self, indices, x):
        if self._hvp is None:
            return super().hvp_estimator(indices, x)
        idx = as_index_set(indices, self.N)
        x = as_vector(x, self.n).copy()
        return lambda v: self.hvp_mean(idx, x, v)


@dataclass
class ExactEvaluation:
    """Full-sample value and gradient, with an optional Hessian action."""

    value: float
    gradient: np.ndarray
    hessian_operator: Optional[Callable[[np.ndarray], np.ndarray]] = None


def full_value(problem: FiniteSumProblem, x) -> float:
    """Mean of all component values, ascending index order."""
    return problem.value_mean(np.arange(problem.N), x)


def full_gradient(problem: FiniteSumProblem, x) -> np.ndarray:
    """Mean of all component gradients, ascending index order."""
    return problem.gradient_mean(np.arange(problem.N), x)


def full_hvp(problem: FiniteSumProblem, x, v) -> np.ndarray:
    """Mean Hessian action over all components."""
    return problem.hvp_mean(np.arange(problem.N), x, v)


def evaluate(problem: FiniteSumProblem, x, with_hessian: bool = False) -> ExactEvaluation:
    operator = problem.hvp_estimator(np.arange(problem.N), x) if with_hessian else None
    return ExactEvaluation(
        value=full_value(problem, x),
        gradient=full_gradient(problem, x),
        hessian_operator=operator,
    )
