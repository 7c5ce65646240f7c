"""Jacobians of piecewise smooth flows: smooth variational equations plus
rank-one jump corrections at crossings."""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, FlowObstruction, JacobianUndefinedError, TangencyError
from .flow import DEFAULT_CONTROLS, DenseArc, FlowControls, Trajectory, solve
from .systems import PiecewiseSystem, SmoothField, SwitchingFunction

__all__ = [
    "saltation_matrix",
    "crossing_correction",
    "propagate_smooth",
    "propagate_span",
    "jacobian",
    "flow_jacobian",
]


def saltation_matrix(pre_velocity, post_velocity, normal) -> np.ndarray:
    """``I + (X^b - X^a) grad h^T / <grad h, X^a>``."""
    Xa = np.asarray(pre_velocity, dtype=float)
    Xb = np.asarray(post_velocity, dtype=float)
    n = np.asarray(normal, dtype=float)
    denom = float(np.dot(n, Xa))
    if denom == 0.0:
        raise TangencyError("pre-crossing field is tangent to the surface", x=None)
    return np.eye(Xa.shape[0]) + np.outer(Xb - Xa, n) / denom


def crossing_correction(pre_field: SmoothField, post_field: SmoothField, surface: SwitchingFunction,
                        x_star, t_star: float = 0.0,
                        controls: FlowControls = DEFAULT_CONTROLS) -> np.ndarray:
    """Jump matrix ``S`` with ``DPhi_after = S @ DPhi_before`` at a crossing."""
    x = np.asarray(x_star, dtype=float)
    grad = surface.gradient(x)
    Xa = pre_field(x, t_star)
    Xb = post_field(x, t_star)
    for name, X in (("pre", Xa), ("post", Xb)):
        d = float(np.dot(grad, X))
        if not abs(d) >= controls.tangency_rel * np.linalg.norm(X) * np.linalg.norm(grad) or d == 0:
            raise TangencyError(f"{name}-crossing Lie derivative {d:.3e} below tangency threshold",
                                x=x, t=t_star, lie_derivative=d)
    return saltation_matrix(Xa, Xb, grad)


def propagate_span(field: SmoothField, x0, t0: float, t1: float, M0=None,
                   controls: FlowControls = DEFAULT_CONTROLS) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``x' = f, M' = Df M`` from ``(x0, M0)`` at ``t0`` to ``t1``.

    Returns ``(x(t1), M(t1))``; ``M0`` may be ``n x k``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    M0 = np.eye(n) if M0 is None else np.asarray(M0, dtype=float)
    if M0.ndim == 1:
        M0 = M0[:, None]
    k = M0.shape[1]
    if t1 == t0:
        return x0.copy(), M0.copy()
    func, jac = field.func, field.jacobian

    def rhs(t, y):
        x = y[:n]
        M = y[n:].reshape(n, k)
        return np.concatenate([func(x, t), (jac(x, t) @ M).ravel()])

    y0 = np.concatenate([x0, M0.ravel()])
    try:
        sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", rtol=controls.rtol, atol=controls.atol,
                        max_step=controls.max_step)
    except DomainError:
        raise
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        raise FlowObstruction(f"variational integration failed: {sol.message}", status="blew-up")
    y = sol.y[:, -1]
    return y[:n].copy(), y[n:].reshape(n, k).copy()


def propagate_smooth(field: SmoothField, arc: DenseArc, M0=None,
                     controls: FlowControls = DEFAULT_CONTROLS) -> np.ndarray:
    """Variational matrix along one smooth arc."""
    return propagate_span(field, arc.x0, arc.t0, arc.t1, M0, controls)[1]


def _on_switching_set(system: PiecewiseSystem, x, controls: FlowControls) -> bool:
    tol = controls.membership(x)
    return any(abs(h(x)) <= tol for h in system.surfaces)


def jacobian(system: PiecewiseSystem, traj: Trajectory, M0=None,
             controls: FlowControls = DEFAULT_CONTROLS) -> np.ndarray:
    """``DPhi`` along a completed trajectory (times ``M0`` if given).

    Refuses trajectories that did not complete and endpoints on the
    switching set, where the flow need not be differentiable.
    """
    if not traj.completed:
        raise JacobianUndefinedError(f"trajectory status is {traj.status.value}",
                                     status=traj.status.value)
    for label, x in (("initial", traj.x0), ("final", traj.x_end)):
        if _on_switching_set(system, x, controls):
            raise JacobianUndefinedError(f"{label} point {x} lies on the switching set", x=x)
    n = system.dim
    M = np.eye(n) if M0 is None else np.asarray(M0, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    for k, arc in enumerate(traj.arcs):
        M = propagate_span(system.components[arc.component], arc.x_start, arc.t_start, arc.t_end,
                           M, controls)[1]
        if k < len(traj.events):
            M = traj.events[k].saltation @ M
    return M


def flow_jacobian(system: PiecewiseSystem, x0, t0: float, T: float, M0=None,
                  controls: FlowControls = DEFAULT_CONTROLS) -> tuple[np.ndarray, np.ndarray, Trajectory]:
    """Solve and differentiate in one call; returns ``(x_end, DPhi, trajectory)``."""
    traj = solve(system, x0, t0, T, controls, keep_dense=False)
    return traj.x_end, jacobian(system, traj, M0, controls), traj
