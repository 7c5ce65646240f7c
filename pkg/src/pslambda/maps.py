"""Invertible planar-section maps behind a small common interface.

Manifold and inclination routines only need ``P``, ``P^-1`` and their
Jacobians, so a closed-form linear map can stand in for a Poincare map in
tests and synthetic experiments.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .systems import SwitchingFunction

__all__ = ["SectionMap", "LinearMap", "FunctionMap"]


class SectionMap:
    """Interface: ``evaluate``, ``inverse`` and their Jacobians.

    ``surfaces`` lists the switching functions whose zero set makes the map
    non-smooth (empty for smooth maps).
    """

    dim: int = 2
    surfaces: tuple[SwitchingFunction, ...] = ()

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        return self.evaluate_with_jacobian(x)[1]

    def inverse_jacobian(self, x) -> np.ndarray:
        return self.inverse_with_jacobian(x)[1]

    def evaluate_with_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def inverse_with_jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def step(self, x, direction: int = 1) -> np.ndarray:
        return self.evaluate(x) if direction > 0 else self.inverse(x)

    def step_with_jacobian(self, x, direction: int = 1) -> tuple[np.ndarray, np.ndarray]:
        return self.evaluate_with_jacobian(x) if direction > 0 else self.inverse_with_jacobian(x)

    def iterate(self, x, n: int) -> np.ndarray:
        """``P^n(x)``; negative ``n`` iterates the inverse."""
        x = np.asarray(x, dtype=float)
        for _ in range(abs(n)):
            x = self.step(x, 1 if n > 0 else -1)
        return x

    def orbit(self, x, n: int) -> list[np.ndarray]:
        out = [np.asarray(x, dtype=float)]
        for _ in range(abs(n)):
            out.append(self.step(out[-1], 1 if n > 0 else -1))
        return out


class LinearMap(SectionMap):
    """``x -> A x + c`` (affine so that fixed points away from 0 can be tested)."""

    def __init__(self, A, offset=None, surfaces: Sequence[SwitchingFunction] = ()):
        self.A = np.array(A, dtype=float)
        self.dim = self.A.shape[0]
        self.offset = np.zeros(self.dim) if offset is None else np.array(offset, dtype=float)
        self.Ainv = np.linalg.inv(self.A)
        self.surfaces = tuple(surfaces)

    def evaluate(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.offset

    def inverse(self, x):
        return self.Ainv @ (np.asarray(x, dtype=float) - self.offset)

    def evaluate_with_jacobian(self, x):
        return self.evaluate(x), self.A.copy()

    def inverse_with_jacobian(self, x):
        return self.inverse(x), self.Ainv.copy()


class FunctionMap(SectionMap):
    """Map from user callables; Jacobians default to central differences."""

    def __init__(self, f: Callable, finv: Callable, dim: int = 2, jac: Callable | None = None,
                 jac_inv: Callable | None = None, surfaces: Sequence[SwitchingFunction] = (),
                 fd_step: float = 1e-6):
        self.f, self.finv = f, finv
        self.jac, self.jac_inv = jac, jac_inv
        self.dim = dim
        self.surfaces = tuple(surfaces)
        self.fd_step = fd_step

    def _call(self, g, x):
        y = np.asarray(g(np.asarray(x, dtype=float)), dtype=float)
        if y.shape != (self.dim,) or not np.all(np.isfinite(y)):
            raise DomainError(f"map returned {y} at {x}", x=x)
        return y

    def evaluate(self, x):
        return self._call(self.f, x)

    def inverse(self, x):
        return self._call(self.finv, x)

    def _fd(self, g, x):
        x = np.asarray(x, dtype=float)
        J = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = self.fd_step * max(1.0, abs(x[j]))
            J[:, j] = (self._call(g, x + e) - self._call(g, x - e)) / (2 * e[j])
        return J

    def evaluate_with_jacobian(self, x):
        J = np.asarray(self.jac(x), dtype=float) if self.jac else self._fd(self.f, x)
        return self.evaluate(x), J

    def inverse_with_jacobian(self, x):
        J = np.asarray(self.jac_inv(x), dtype=float) if self.jac_inv else self._fd(self.finv, x)
        return self.inverse(x), J
