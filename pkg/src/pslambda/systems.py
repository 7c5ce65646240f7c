"""Piecewise smooth vector fields, switching surfaces and point classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, MalformedSystemError

__all__ = [
    "SmoothField",
    "SwitchingFunction",
    "PiecewiseSystem",
    "Interior",
    "Crossing",
    "Tangency",
    "NonRegular",
    "Corner",
    "PointClass",
    "lie_derivative",
    "classify_point",
    "membership_tol",
    "constant_field",
    "linear_field",
    "duffing_field",
    "polynomial_field",
    "harmonic_field",
    "sum_field",
    "polynomial_surface",
    "coordinate_surface",
    "DEFAULT_MEMBERSHIP_TOL",
    "DEFAULT_GRAD_TOL",
    "DEFAULT_FD_STEP",
]

DEFAULT_MEMBERSHIP_TOL = 1e-10
DEFAULT_GRAD_TOL = 1e-8
DEFAULT_FD_STEP = 1e-6

FieldFunc = Callable[[np.ndarray, float], np.ndarray]


def _fd_steps(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * np.maximum(1.0, np.abs(x))


@dataclass(frozen=True, eq=False)
class SmoothField:
    """A smooth component ``f(x, t)`` of a piecewise smooth vector field.

    ``jac`` is optional; without it the Jacobian is a central difference with
    relative step ``fd_step``. ``period`` is ``None`` for autonomous fields.
    """

    func: FieldFunc
    dim: int
    jac: Callable[[np.ndarray, float], np.ndarray] | None = None
    period: float | None = None
    label: str = ""
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("field dimension must be >= 2")
        if self.period is not None and not self.period > 0:
            raise ValueError("period must be positive")

    @property
    def autonomous(self) -> bool:
        return self.period is None

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        try:
            v = np.asarray(self.func(x, t), dtype=float)
        except (ArithmeticError, ValueError) as exc:
            raise DomainError(f"field {self.label or '<unnamed>'} failed at x={x}: {exc}",
                              map=self.label, x=x) from exc
        if v.shape != (self.dim,) or not np.all(np.isfinite(v)):
            raise DomainError(f"field {self.label or '<unnamed>'} returned {v} at x={x}",
                              map=self.label, x=x)
        return v

    def jacobian(self, x, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            J = np.asarray(self.jac(x, t), dtype=float)
            if not np.all(np.isfinite(J)):
                raise DomainError(f"Jacobian of {self.label} not finite at {x}", map=self.label, x=x)
            return J
        steps = _fd_steps(x, self.fd_step)
        J = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = steps[j]
            J[:, j] = (self(x + e, t) - self(x - e, t)) / (2.0 * steps[j])
        return J


@dataclass(frozen=True, eq=False)
class SwitchingFunction:
    """Scalar switching function ``h(x)``; its zero set is one surface."""

    func: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    index: int = 0
    label: str = ""
    fd_step: float = DEFAULT_FD_STEP

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        try:
            v = float(self.func(x))
        except (ArithmeticError, ValueError, TypeError) as exc:
            raise DomainError(f"switching function {self.label or self.index} failed at {x}: {exc}",
                              map=self.label or f"h{self.index}", x=x) from exc
        if not math.isfinite(v):
            raise DomainError(f"switching function {self.label or self.index} not finite at {x}",
                              map=self.label or f"h{self.index}", x=x)
        return v

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            g = np.asarray(self.grad(x), dtype=float)
        else:
            steps = _fd_steps(x, self.fd_step)
            g = np.empty(x.shape[0])
            for j in range(x.shape[0]):
                e = np.zeros(x.shape[0])
                e[j] = steps[j]
                g[j] = (self(x + e) - self(x - e)) / (2.0 * steps[j])
        if not np.all(np.isfinite(g)):
            raise DomainError(f"gradient of {self.label or self.index} not finite at {x}",
                              map=self.label or f"grad h{self.index}", x=x)
        return g

    def scaled(self, c: float) -> "SwitchingFunction":
        """Return ``c * h`` (same zero set; sign flips when c < 0)."""
        grad = None if self.grad is None else (lambda x, g=self.grad: c * np.asarray(g(x)))
        return SwitchingFunction(lambda x, f=self.func: c * f(x), grad, self.index, self.label, self.fd_step)


# -- point classes ---------------------------------------------------------

@dataclass(frozen=True)
class Interior:
    component: int
    kind: str = field(default="interior", init=False)


@dataclass(frozen=True)
class Crossing:
    """Crossing point of surface ``surface``.

    ``pre`` and ``post`` are the components before and after the switch in
    forward time; ``sign`` is the common sign of the two Lie derivatives.
    """

    surface: int
    pre: int
    post: int
    sign: int
    kind: str = field(default="crossing", init=False)


@dataclass(frozen=True)
class Tangency:
    surface: int
    kind: str = field(default="tangency", init=False)


@dataclass(frozen=True)
class NonRegular:
    surface: int
    kind: str = field(default="non-regular", init=False)


@dataclass(frozen=True)
class Corner:
    surfaces: tuple[int, ...]
    kind: str = field(default="corner", init=False)


PointClass = Union[Interior, Crossing, Tangency, NonRegular, Corner]


def _parse_sign_key(key) -> tuple[int, ...]:
    if isinstance(key, str):
        table = {"+": 1, "-": -1, "*": 0}
        try:
            return tuple(table[c] for c in key)
        except KeyError as exc:
            raise MalformedSystemError(f"bad sign pattern {key!r}; use '+', '-', '*'") from exc
    return tuple(int(np.sign(k)) for k in key)


class PiecewiseSystem:
    """Components ``X^1..X^k`` separated by surfaces ``h_1..h_N``.

    ``regions`` maps sign vectors over ``(h_1, ..., h_N)`` to component
    indices. Keys are tuples of +1/-1 (0 is a wildcard) or strings such as
    ``"+-"`` / ``"*+"``.
    """

    def __init__(self, components: Sequence[SmoothField], surfaces: Sequence[SwitchingFunction],
                 regions: Mapping, *, label: str = ""):
        self.components = tuple(components)
        self.surfaces = tuple(surfaces)
        self.label = label
        if not self.components:
            raise MalformedSystemError("system needs at least one component")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise MalformedSystemError(f"components have mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()
        n_surf = len(self.surfaces)
        patterns: list[tuple[tuple[int, ...], int]] = []
        for key, comp in regions.items():
            signs = _parse_sign_key(key)
            if len(signs) != n_surf:
                raise MalformedSystemError(f"sign pattern {key!r} has {len(signs)} entries, expected {n_surf}")
            if not 0 <= int(comp) < len(self.components):
                raise MalformedSystemError(f"region {key!r} points to missing component {comp}")
            patterns.append((signs, int(comp)))
        self._patterns = tuple(patterns)
        periods = {c.period for c in self.components if c.period is not None}
        if len(periods) > 1:
            raise MalformedSystemError(f"components declare different periods {sorted(periods)}")
        self.period = periods.pop() if periods else None

    def __repr__(self) -> str:
        return (f"PiecewiseSystem({self.label or 'unnamed'}: {len(self.components)} components, "
                f"{len(self.surfaces)} surfaces, n={self.dim})")

    def signs(self, x) -> tuple[int, ...]:
        return tuple(1 if h(x) > 0 else -1 for h in self.surfaces)

    def region_index(self, signs: Sequence[int]) -> int | None:
        for pattern, comp in self._patterns:
            if all(p == 0 or p == s for p, s in zip(pattern, signs)):
                return comp
        return None

    def component_at(self, x) -> int:
        """Component index at ``x`` off the switching set."""
        s = self.signs(x)
        comp = self.region_index(s)
        if comp is None:
            raise MalformedSystemError(f"no component assigned to sign vector {s}", signs=s)
        return comp

    def adjacent(self, i: int, x) -> tuple[int, int]:
        """Components on the ``h_i < 0`` and ``h_i > 0`` sides of surface ``i`` at ``x``."""
        s = list(self.signs(x))
        s[i] = -1
        minus = self.region_index(s)
        s[i] = 1
        plus = self.region_index(s)
        if minus is None or plus is None or minus == plus:
            raise MalformedSystemError(
                f"surface {i} at {np.asarray(x)} does not separate two components "
                f"(got {minus}, {plus})", surface=i)
        return minus, plus

    def with_components(self, components: Sequence[SmoothField], label: str | None = None) -> "PiecewiseSystem":
        regions = {pattern: comp for pattern, comp in self._patterns}
        return PiecewiseSystem(components, self.surfaces, regions, label=self.label if label is None else label)

    @property
    def regions(self) -> dict[tuple[int, ...], int]:
        return {pattern: comp for pattern, comp in self._patterns}


def membership_tol(x, tol: float | None = None) -> float:
    base = DEFAULT_MEMBERSHIP_TOL if tol is None else tol
    return base * (1.0 + float(np.linalg.norm(x)))


def lie_derivative(field: SmoothField, surface: SwitchingFunction, x, t: float = 0.0) -> float:
    """Directional derivative ``<X(x, t), grad h(x)>``."""
    return float(np.dot(field(x, t), surface.gradient(x)))


def classify_point(system: PiecewiseSystem, x, t: float = 0.0, tol: float | None = None,
                   grad_tol: float = DEFAULT_GRAD_TOL) -> PointClass:
    """Classify ``x`` against the crossing-point conditions.

    ``tol`` is the absolute surface-membership threshold ``|h_i(x)| <= tol``;
    by default ``1e-10 * (1 + |x|)``.
    """
    x = np.asarray(x, dtype=float)
    if tol is None:
        tol = membership_tol(x)
    if tol <= 0:
        raise ValueError("membership tolerance must be positive")
    active = [i for i, h in enumerate(system.surfaces) if abs(h(x)) <= tol]
    if not active:
        return Interior(system.component_at(x))
    if len(active) > 1:
        return Corner(tuple(active))
    i = active[0]
    surf = system.surfaces[i]
    grad = surf.gradient(x)
    if np.linalg.norm(grad) < grad_tol:
        return NonRegular(i)
    minus, plus = system.adjacent(i, x)
    d_minus = float(np.dot(system.components[minus](x, t), grad))
    d_plus = float(np.dot(system.components[plus](x, t), grad))
    if d_minus * d_plus <= 0.0:
        return Tangency(i)
    if d_minus > 0:
        return Crossing(i, pre=minus, post=plus, sign=1)
    return Crossing(i, pre=plus, post=minus, sign=-1)


# -- built-in fields -------------------------------------------------------

def constant_field(v: Sequence[float], label: str = "constant") -> SmoothField:
    v = np.array(v, dtype=float)
    n = v.shape[0]
    zero = np.zeros((n, n))
    return SmoothField(lambda x, t: v.copy(), n, jac=lambda x, t: zero.copy(), label=label)


def linear_field(A, label: str = "linear") -> SmoothField:
    A = np.array(A, dtype=float)
    return SmoothField(lambda x, t: A @ x, A.shape[0], jac=lambda x, t: A.copy(), label=label)


def duffing_field(alpha: float = 1.0, beta: float = 1.0, delta: float = 0.0,
                  label: str = "duffing") -> SmoothField:
    """``x' = y, y' = alpha x - beta x^3 - delta y``."""

    def f(x, t):
        return np.array([x[1], alpha * x[0] - beta * x[0] ** 3 - delta * x[1]])

    def jac(x, t):
        return np.array([[0.0, 1.0], [alpha - 3.0 * beta * x[0] ** 2, -delta]])

    return SmoothField(f, 2, jac=jac, label=label)


def polynomial_field(terms: Sequence[Sequence], dim: int | None = None,
                     label: str = "polynomial") -> SmoothField:
    """Polynomial field from per-component term lists.

    ``terms[i]`` is a list of ``(coef, exponents)`` pairs for component ``i``,
    e.g. ``[[(1.0, (0, 1))], [(1.0, (1, 0)), (-1.0, (3, 0))]]`` is Duffing.
    """
    n = len(terms) if dim is None else dim
    coefs, exps, rows = [], [], []
    for i, comp in enumerate(terms):
        for coef, ex in comp:
            ex = tuple(int(e) for e in ex)
            if len(ex) != n or min(ex) < 0:
                raise ValueError(f"bad exponent tuple {ex} for dimension {n}")
            coefs.append(float(coef))
            exps.append(ex)
            rows.append(i)
    C = np.array(coefs)
    E = np.array(exps, dtype=int).reshape(-1, n)
    R = np.array(rows, dtype=int)
    # derivative tables: d/dx_j of c x^e = c e_j x^(e - e_j)
    dC, dE, dR, dJ = [], [], [], []
    for c, e, r in zip(C, E, R):
        for j in range(n):
            if e[j] > 0:
                e2 = e.copy()
                e2[j] -= 1
                dC.append(c * e[j])
                dE.append(e2)
                dR.append(r)
                dJ.append(j)
    dC = np.array(dC)
    dE = np.array(dE, dtype=int).reshape(-1, n)
    dR = np.array(dR, dtype=int)
    dJ = np.array(dJ, dtype=int)

    def f(x, t):
        vals = C * np.prod(x ** E, axis=1) if C.size else C
        return np.bincount(R, weights=vals, minlength=n)

    def jac(x, t):
        J = np.zeros((n, n))
        if dC.size:
            vals = dC * np.prod(x ** dE, axis=1)
            np.add.at(J, (dR, dJ), vals)
        return J

    return SmoothField(f, n, jac=jac, label=label)


def harmonic_field(amplitude: Sequence[float], period: float, phase: float = 0.0,
                   label: str = "harmonic") -> SmoothField:
    """Spatially uniform forcing ``amplitude * cos(2 pi t / period + phase)``."""
    amp = np.array(amplitude, dtype=float)
    n = amp.shape[0]
    w = 2.0 * math.pi / period
    zero = np.zeros((n, n))
    return SmoothField(lambda x, t: amp * math.cos(w * t + phase), n,
                       jac=lambda x, t: zero.copy(), period=period, label=label)


def sum_field(base: SmoothField, extra: SmoothField | None, scale: float = 1.0,
              label: str | None = None) -> SmoothField:
    """``base + scale * extra`` (the perturbed component of an extended system)."""
    if extra is None or scale == 0.0:
        return base
    if extra.dim != base.dim:
        raise ValueError("dimension mismatch in sum_field")
    bf, ef = base.func, extra.func

    def f(x, t):
        return bf(x, t) + scale * ef(x, t)

    def jac(x, t):
        return base.jacobian(x, t) + scale * extra.jacobian(x, t)

    period = extra.period if extra.period is not None else base.period
    return SmoothField(f, base.dim, jac=jac, period=period,
                       label=label or f"{base.label}+{scale:g}*{extra.label}")


def polynomial_surface(terms: Sequence[Sequence], dim: int, index: int = 0,
                       label: str = "") -> SwitchingFunction:
    """Switching function from ``(coef, exponents)`` terms."""
    poly = polynomial_field([terms] + [[] for _ in range(dim - 1)], dim=dim)
    return SwitchingFunction(lambda x: poly.func(x, 0.0)[0], lambda x: poly.jac(x, 0.0)[0],
                             index=index, label=label or f"h{index}")


def coordinate_surface(axis: int, value: float, dim: int, index: int = 0,
                       label: str = "") -> SwitchingFunction:
    """``h(x) = x[axis] - value``."""
    g = np.zeros(dim)
    g[axis] = 1.0
    return SwitchingFunction(lambda x: x[axis] - value, lambda x: g.copy(), index=index,
                             label=label or f"x{axis}-{value:g}")
