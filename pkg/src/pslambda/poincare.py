"""Extended product flow, time-T maps at phase sections and their saddles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (ConvergenceError, FlowObstruction, HypothesisViolation, JacobianUndefinedError,
                     NotHyperbolicError, PSVFError, TangencyError)
from .flow import DEFAULT_CONTROLS, FlowControls, solve
from .maps import SectionMap
from .systems import PiecewiseSystem, SmoothField, sum_field
from .variational import jacobian

__all__ = [
    "ExtendedSystem",
    "PoincareMap",
    "SaddleData",
    "ConjugacyResult",
    "find_fixed_point",
    "saddle_from_jacobian",
    "conjugacy_residual",
    "saddle_phase_family",
    "forced_linear_orbit",
]


class ExtendedSystem:
    """``x' = X0^j(x) + eps X1^j(x, t)``, ``t' = 1`` on ``R^n x R/TZ``.

    ``perturbations`` is one field per component (``None`` for none) or a
    single field shared by all components.
    """

    def __init__(self, base: PiecewiseSystem, perturbations=None, epsilon: float = 0.0,
                 period: float | None = None):
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        k = len(base.components)
        if perturbations is None or isinstance(perturbations, SmoothField):
            perts = [perturbations] * k
        else:
            perts = list(perturbations)
            if len(perts) != k:
                raise ValueError(f"expected {k} perturbation fields, got {len(perts)}")
        periods = {p.period for p in perts if p is not None and p.period is not None}
        if period is None:
            if len(periods) != 1:
                raise ValueError("period must be given or declared by the perturbation")
            period = periods.pop()
        elif periods and any(abs(p - period) > 1e-12 * period for p in periods):
            raise ValueError(f"perturbation period {periods} differs from {period}")
        if not period > 0:
            raise ValueError("period must be positive")
        self.base = base
        self.perturbations = tuple(perts)
        self.epsilon = float(epsilon)
        self.period = float(period)
        comps = [sum_field(c, p, self.epsilon, label=c.label) for c, p in zip(base.components, perts)]
        self.system = base.with_components(comps)
        self.dim = base.dim

    @property
    def surfaces(self):
        return self.system.surfaces

    def with_epsilon(self, epsilon: float) -> "ExtendedSystem":
        return ExtendedSystem(self.base, self.perturbations, epsilon, self.period)

    def flow(self, x, t: float, tau: float, controls: FlowControls = DEFAULT_CONTROLS):
        """``Phi(tau; x, t) = (phi(tau; x, t), t + tau)``."""
        traj = solve(self.system, x, t, tau, controls, keep_dense=False).require_completed()
        return traj.x_end, t + tau

    def phase(self, t: float) -> float:
        return t % self.period


class PoincareMap(SectionMap):
    """``P^{t0}(x) = phi(T; x, t0)`` with inverse by backward flow."""

    def __init__(self, ext: ExtendedSystem, phase: float = 0.0,
                 controls: FlowControls = DEFAULT_CONTROLS, log_limit: int = 1000):
        self.ext = ext
        self.phase = float(phase)
        self.controls = controls
        self.dim = ext.dim
        self.surfaces = ext.surfaces
        self.refusals: list[dict] = []
        self._log_limit = log_limit

    @property
    def period(self) -> float:
        return self.ext.period

    def _log(self, x, exc: PSVFError, direction: int) -> None:
        if len(self.refusals) < self._log_limit:
            self.refusals.append({"x": np.asarray(x, dtype=float).tolist(), "direction": direction,
                                  "error": exc.kind, "message": str(exc)})

    def _run(self, x, direction: int):
        tau = direction * self.period
        traj = solve(self.ext.system, x, self.phase, tau, self.controls, keep_dense=False)
        try:
            return traj.require_completed()
        except FlowObstruction as exc:
            self._log(x, exc, direction)
            raise

    def evaluate(self, x) -> np.ndarray:
        return self._run(x, 1).x_end

    def inverse(self, x) -> np.ndarray:
        return self._run(x, -1).x_end

    def trajectory(self, x, direction: int = 1):
        return self._run(x, direction)

    def _with_jac(self, x, direction: int):
        traj = self._run(x, direction)
        try:
            J = jacobian(self.ext.system, traj, controls=self.controls)
        except (JacobianUndefinedError, TangencyError) as exc:
            self._log(x, exc, direction)
            raise
        return traj.x_end, J

    def evaluate_with_jacobian(self, x):
        return self._with_jac(x, 1)

    def inverse_with_jacobian(self, x):
        return self._with_jac(x, -1)

    def tangent(self, x, v, direction: int = 1):
        """Push a tangent vector (or ``n x k`` frame) through one iterate."""
        traj = self._run(x, direction)
        return traj.x_end, jacobian(self.ext.system, traj, M0=np.asarray(v, dtype=float),
                                    controls=self.controls)

    def fd_jacobian(self, x, step: float = 1e-6, direction: int = 1) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        J = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = step * max(1.0, abs(x[j]))
            J[:, j] = (self.step(x + e, direction) - self.step(x - e, direction)) / (2 * e[j])
        return J


@dataclass
class SaddleData:
    point: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    stable_values: np.ndarray
    unstable_values: np.ndarray
    stable_vectors: np.ndarray  # columns
    unstable_vectors: np.ndarray
    margin: float
    clearance: float
    phase: float = 0.0
    residual: float = 0.0
    iterations: int = 0

    @property
    def s(self) -> int:
        return len(self.stable_values)

    @property
    def u(self) -> int:
        return len(self.unstable_values)

    @property
    def is_saddle(self) -> bool:
        return self.s >= 1 and self.u >= 1

    def to_dict(self) -> dict:
        def c(v):
            v = np.asarray(v)
            return v.real.tolist() if np.all(v.imag == 0) else [[z.real, z.imag] for z in v.ravel()]
        return {"point": self.point.tolist(), "jacobian": self.jacobian.tolist(),
                "eigenvalues": c(self.eigenvalues), "s": self.s, "u": self.u, "margin": self.margin,
                "clearance": self.clearance, "phase": self.phase, "residual": self.residual}


def _canonical(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v) > 1e-12))
    return -v if v[k] < 0 else v


def _real_basis(vals, vecs):
    cols, used = [], set()
    for k, lam in enumerate(vals):
        if k in used:
            continue
        if abs(lam.imag) <= 1e-14 * max(1.0, abs(lam)):
            cols.append(_canonical(vecs[:, k].real))
        else:
            cols.append(_canonical(vecs[:, k].real))
            cols.append(_canonical(vecs[:, k].imag))
            for m in range(k + 1, len(vals)):
                if m not in used and abs(vals[m] - np.conj(lam)) <= 1e-10 * abs(lam):
                    used.add(m)
                    break
    return np.array(cols).T if cols else np.zeros((len(vals), 0))


def _clearance(surfaces, x) -> float:
    if not surfaces:
        return math.inf
    out = math.inf
    for h in surfaces:
        g = np.linalg.norm(h.gradient(x))
        out = min(out, abs(h(x)) / g if g > 0 else 0.0)
    return out


def saddle_from_jacobian(point, DP, surfaces=(), margin_tol: float = 1e-6, phase: float = 0.0,
                         residual: float = 0.0, iterations: int = 0) -> SaddleData:
    vals, vecs = np.linalg.eig(np.asarray(DP, dtype=float))
    order = np.argsort(np.abs(vals))
    vals, vecs = vals[order], vecs[:, order]
    mods = np.abs(vals)
    margin = float(np.min(np.abs(mods - 1.0)))
    if margin < margin_tol:
        raise NotHyperbolicError(f"eigenvalue modulus within {margin:.2e} of 1",
                                 eigenvalues=[complex(v) for v in vals], margin=margin)
    st, un = mods < 1, mods > 1
    return SaddleData(
        point=np.asarray(point, dtype=float), jacobian=np.asarray(DP, dtype=float), eigenvalues=vals,
        stable_values=vals[st], unstable_values=vals[un],
        stable_vectors=_real_basis(vals[st], vecs[:, st]),
        unstable_vectors=_real_basis(vals[un], vecs[:, un]),
        margin=margin, clearance=_clearance(surfaces, point), phase=phase, residual=residual,
        iterations=iterations)


def find_fixed_point(pmap: SectionMap, x_guess, tol: float = 1e-10, max_iter: int = 50,
                     margin_tol: float = 1e-6, clearance: float | None = None) -> SaddleData:
    """Newton on ``P(x) - x``; returns the fixed point with its spectrum.

    Uses the variational Jacobian and falls back to finite differences if it
    is refused (orbit grazing a threshold or touching the switching set).
    """
    x = np.asarray(x_guess, dtype=float).copy()
    n = x.shape[0]
    res = math.inf
    for it in range(1, max_iter + 1):
        try:
            Px, DP = pmap.evaluate_with_jacobian(x)
        except (JacobianUndefinedError, TangencyError):
            Px = pmap.evaluate(x)
            DP = pmap.fd_jacobian(x) if hasattr(pmap, "fd_jacobian") else pmap.jacobian(x)
        F = Px - x
        res = float(np.linalg.norm(F))
        if res <= tol * max(1.0, float(np.linalg.norm(x))) and it > 1:
            break
        dx = np.linalg.solve(DP - np.eye(n), -F)
        x = x + dx
        if float(np.linalg.norm(dx)) <= 1e-3 * tol:
            Px, DP = pmap.evaluate_with_jacobian(x)
            res = float(np.linalg.norm(Px - x))
            break
    else:
        raise ConvergenceError(f"fixed-point Newton did not converge (residual {res:.3e})",
                               residual=res, x=x)
    if res > tol * max(1.0, float(np.linalg.norm(x))):
        raise ConvergenceError(f"fixed-point residual {res:.3e} above {tol:g}", residual=res, x=x)
    _, DP = pmap.evaluate_with_jacobian(x)
    phase = getattr(pmap, "phase", 0.0)
    sd = saddle_from_jacobian(x, DP, pmap.surfaces, margin_tol, phase, res, it)
    if clearance is not None and sd.clearance < clearance:
        raise HypothesisViolation(f"fixed point within {sd.clearance:.2e} of the switching set",
                                  clearance=sd.clearance)
    return sd


@dataclass
class ConjugacyResult:
    max_residual: float
    residuals: np.ndarray
    failures: int
    failed_points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "n_samples": int(len(self.residuals)),
                "failures": self.failures, "failed_points": self.failed_points}


def conjugacy_residual(ext: ExtendedSystem, t1: float, t2: float, samples,
                       controls: FlowControls = DEFAULT_CONTROLS) -> ConjugacyResult:
    """``max |Phi^{t2-t1}(P^{t1}(x)) - P^{t2}(Phi^{t2-t1}(x))|`` over samples."""
    P1 = PoincareMap(ext, t1, controls)
    P2 = PoincareMap(ext, t2, controls)
    dt = t2 - t1
    res, failed = [], []
    for x in np.asarray(samples, dtype=float):
        try:
            if dt == 0:
                a = P1(x)
                b = P2(x)
            else:
                a = ext.flow(P1(x), t1, dt, controls)[0]
                b = P2(ext.flow(x, t1, dt, controls)[0])
            res.append(float(np.linalg.norm(a - b)))
        except PSVFError as exc:
            failed.append({"x": x.tolist(), "error": exc.kind})
    arr = np.array(res)
    return ConjugacyResult(float(arr.max()) if arr.size else math.nan, arr, len(failed), failed)


def saddle_phase_family(ext: ExtendedSystem, sections: Sequence[float], x_guess,
                        controls: FlowControls = DEFAULT_CONTROLS, tol: float = 1e-10):
    """Continue the periodic saddle orbit across phase sections.

    Returns a list with one :class:`SaddleData` per section, or a dict
    ``{"gap": phase, "error": ...}`` where continuation failed.
    """
    out: list = []
    x = np.asarray(x_guess, dtype=float)
    prev_t = None
    for t in sections:
        try:
            if prev_t is not None:
                x = ext.flow(x, prev_t, t - prev_t, controls)[0]
            P = PoincareMap(ext, t, controls)
            sd = find_fixed_point(P, x, tol=tol)
            out.append(sd)
            x = sd.point
            prev_t = t
        except PSVFError as exc:
            out.append({"gap": float(t), "error": exc.kind, "message": str(exc)})
    return out


def forced_linear_orbit(t, epsilon: float, omega: float) -> float:
    """Periodic solution of ``x' = x + eps sin(omega t)``."""
    return -epsilon * (math.sin(omega * t) + omega * math.cos(omega * t)) / (1.0 + omega ** 2)
