"""Event-driven integration of piecewise smooth systems through crossing points.

Smooth arcs are advanced with an embedded 8(5,3) Runge-Kutta pair with dense
output. After every accepted step the switching functions are scanned on the
step's interpolant; a sign change (or a dip through zero between two sign-
preserving endpoints) is bracketed, solved and Newton-polished. At a certified
crossing the component is switched and integration restarts at the event
point.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .errors import CrossingTimeError, DomainError, FlowObstruction, MalformedSystemError, TangencyError
from .systems import (Crossing, Interior, PiecewiseSystem, PointClass, SmoothField, SwitchingFunction,
                      classify_point)

__all__ = [
    "FlowControls",
    "DenseArc",
    "Arc",
    "CrossingEvent",
    "Status",
    "Trajectory",
    "integrate_smooth",
    "locate_event",
    "crossing_time",
    "solve",
    "flow_map",
]


@dataclass(frozen=True)
class FlowControls:
    """Accuracy settings shared by every integration in the toolkit."""

    rtol: float = 1e-10
    atol: float = 1e-12
    event_tol: float = 1e-12
    tangency_rel: float = 1e-6
    rearm_factor: float = 10.0
    max_events: int = 10_000
    max_norm: float = 1e8
    max_step: float = math.inf
    membership_tol: float = 1e-10
    grad_tol: float = 1e-8
    domain_lo: tuple[float, ...] | None = None
    domain_hi: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("rtol", "atol", "event_tol", "tangency_rel", "max_norm", "max_step",
                     "membership_tol", "grad_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")

    def membership(self, x) -> float:
        return self.membership_tol * (1.0 + float(np.linalg.norm(x)))

    def in_domain(self, x) -> bool:
        if self.domain_lo is not None and np.any(x < np.asarray(self.domain_lo)):
            return False
        if self.domain_hi is not None and np.any(x > np.asarray(self.domain_hi)):
            return False
        return True

    def replace(self, **changes) -> "FlowControls":
        from dataclasses import replace
        return replace(self, **changes)


DEFAULT_CONTROLS = FlowControls()


class DenseArc:
    """Interpolable solution of one smooth field on ``[t0, t1]`` (``t1 < t0`` allowed)."""

    def __init__(self, field: SmoothField, t0: float, x0: np.ndarray):
        self.field = field
        self.t0 = float(t0)
        self.x0 = np.array(x0, dtype=float)
        self.t1 = self.t0
        self.x1 = self.x0.copy()
        self._breaks = [self.t0]
        self._pieces: list = []
        self.status = "ok"

    @property
    def direction(self) -> int:
        return 1 if self.t1 >= self.t0 else -1

    @property
    def n_steps(self) -> int:
        return len(self._pieces)

    @property
    def breaks(self) -> np.ndarray:
        return np.array(self._breaks)

    def _append(self, t_new: float, x_new: np.ndarray, piece) -> None:
        self._breaks.append(float(t_new))
        self._pieces.append(piece)
        self.t1 = float(t_new)
        self.x1 = np.array(x_new, dtype=float)

    def _truncate(self, t_cut: float, x_cut: np.ndarray, piece) -> None:
        self._append(t_cut, x_cut, piece)

    def piece(self, k: int):
        return self._pieces[k]

    def step_span(self, k: int) -> tuple[float, float]:
        return self._breaks[k], self._breaks[k + 1]

    def __call__(self, t: float) -> np.ndarray:
        if not self._pieces:
            return self.x0.copy()
        if t == self.t1:
            return self.x1.copy()
        if t == self.t0:
            return self.x0.copy()
        b = np.asarray(self._breaks)
        if self.direction < 0:
            b = -b
            key = -t
        else:
            key = t
        k = int(np.searchsorted(b, key, side="right")) - 1
        k = min(max(k, 0), len(self._pieces) - 1)
        return np.asarray(self._pieces[k](t), dtype=float)


def _make_rhs(field: SmoothField):
    func = field.func

    def rhs(t, y):
        return func(y, t)

    return rhs


def _step_iter(field: SmoothField, x0, t0: float, t_end: float, controls: FlowControls):
    """Yield ``(t_old, t, y, dense)`` per accepted step; raise on failure."""
    solver = DOP853(_make_rhs(field), t0, np.array(x0, dtype=float), t_end,
                    rtol=controls.rtol, atol=controls.atol, max_step=controls.max_step)
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise _StepFailure(msg or "step failed")
        yield solver.t_old, solver.t, solver.y.copy(), solver.dense_output()


class _StepFailure(Exception):
    pass


def integrate_smooth(field: SmoothField, x0, t0: float, dt: float,
                     controls: FlowControls = DEFAULT_CONTROLS) -> DenseArc:
    """Integrate one smooth field for duration ``dt`` (either sign).

    The returned arc carries ``status`` ``"ok"``, ``"blew-up"`` or
    ``"left-domain"``; on failure it ends at the last good step.
    """
    arc = DenseArc(field, t0, x0)
    if dt == 0:
        return arc
    _advance(arc, field, t0 + dt, controls, surfaces=(), armed=())
    return arc


def _hdot(surface: SwitchingFunction, field: SmoothField, x, t) -> float:
    return float(np.dot(surface.gradient(x), field(x, t)))


def _check_tangency(surface, field, x, t, controls, index) -> float:
    grad = surface.gradient(x)
    vel = field(x, t)
    d = float(np.dot(grad, vel))
    scale = float(np.linalg.norm(vel) * np.linalg.norm(grad))
    if not abs(d) >= controls.tangency_rel * scale or scale == 0.0:
        raise TangencyError(
            f"Lie derivative {d:.3e} of surface {index} below threshold "
            f"{controls.tangency_rel:g}*|X||grad h| = {controls.tangency_rel * scale:.3e} at x={x}",
            surface=index, x=x, t=t, lie_derivative=d)
    return d


def _scan_step(surface: SwitchingFunction, index: int, field: SmoothField, dense,
               ta: float, tb: float, xa, xb, ha: float, hb: float,
               controls: FlowControls) -> float | None:
    """Earliest root of ``h`` along one step, or ``None``."""

    def g(t):
        return surface(dense(t))

    if ha == 0.0:
        return None
    if hb == 0.0:
        lo, hi = ta, tb
        root = tb
    elif ha * hb < 0.0:
        lo, hi = ta, tb
        root = None
    else:
        da = _hdot(surface, field, xa, ta) * (tb - ta)
        db = _hdot(surface, field, xb, tb) * (tb - ta)
        if not (da * ha < 0.0 and db * hb > 0.0):
            return None
        # |h| has an interior minimum: locate it on the interpolant
        def gd(t):
            return _hdot(surface, field, dense(t), t)

        tm = brentq(gd, ta, tb, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        hm = g(tm)
        if hm * ha < 0.0:
            lo, hi = ta, tm
            root = None
        elif abs(hm) <= controls.membership(dense(tm)):
            raise TangencyError(f"surface {index} touched without crossing at t={tm:.15g}",
                                surface=index, t=tm, x=dense(tm))
        else:
            return None
    if root is None:
        a, b = (lo, hi) if lo < hi else (hi, lo)
        root = brentq(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # Newton polish with dh/dt = <grad h, X>
    tmin, tmax = min(lo, hi), max(lo, hi)
    r = root
    gr = g(r)
    for _ in range(3):
        if abs(gr) <= 0.01 * controls.event_tol:
            break
        xr = dense(r)
        d = _hdot(surface, field, xr, r)
        if d == 0.0:
            break
        r_new = min(max(r - gr / d, tmin), tmax)
        g_new = g(r_new)
        if abs(g_new) >= abs(gr):
            break
        r, gr = r_new, g_new
    xr = dense(r)
    _check_tangency(surface, field, xr, r, controls, index)
    if abs(gr) > controls.event_tol:
        raise CrossingTimeError(f"event residual {abs(gr):.3e} exceeds tolerance on surface {index}",
                                surface=index, t=r, residual=abs(gr))
    return r


def _advance(arc: DenseArc, field: SmoothField, t_end: float, controls: FlowControls,
             surfaces: Sequence[SwitchingFunction], armed: Sequence[bool]):
    """Extend ``arc`` toward ``t_end``; stop at the earliest event.

    Returns ``None`` or ``(t*, x*, surface index)``. ``armed[i]`` False means
    surface ``i`` is ignored until ``|h_i|`` exceeds the re-arm level.
    """
    armed = list(armed)
    x = arc.x1
    hv = [h(x) for h in surfaces]
    rearm = controls.rearm_factor * controls.event_tol
    try:
        for ta, tb, xb, dense in _step_iter(field, x, arc.t1, t_end, controls):
            if not np.all(np.isfinite(xb)) or np.linalg.norm(xb) > controls.max_norm:
                arc.status = "blew-up"
                return None
            if not controls.in_domain(xb):
                arc._append(tb, xb, dense)
                arc.status = "left-domain"
                return None
            xa = arc.x1
            hb = [h(xb) for h in surfaces]
            best = None
            for i, surf in enumerate(surfaces):
                if not armed[i]:
                    continue
                r = _scan_step(surf, i, field, dense, ta, tb, xa, xb, hv[i], hb[i], controls)
                if r is not None and (best is None or (r - best[0]) * (tb - ta) < 0):
                    best = (r, i)
            if best is not None:
                r, i = best
                xr = np.asarray(dense(r), dtype=float)
                arc._truncate(r, xr, dense)
                return r, xr, i
            arc._append(tb, xb, dense)
            for i in range(len(surfaces)):
                if not armed[i] and abs(hb[i]) > rearm:
                    armed[i] = True
            hv = hb
    except _StepFailure:
        arc.status = "blew-up"
    except DomainError:
        arc.status = "left-domain"
    return None


def locate_event(arc: DenseArc, surfaces: Sequence[SwitchingFunction],
                 controls: FlowControls = DEFAULT_CONTROLS,
                 ignore: Sequence[int] = ()) -> tuple[float, int] | None:
    """Earliest crossing of any surface along a finished arc.

    Raises :class:`TangencyError` when the root cannot be certified transversal.
    """
    if arc.n_steps == 0:
        return None
    for k in range(arc.n_steps):
        ta, tb = arc.step_span(k)
        dense = arc.piece(k)
        xa, xb = arc(ta) if k else arc.x0, np.asarray(dense(tb), dtype=float)
        best = None
        for i, surf in enumerate(surfaces):
            if i in ignore:
                continue
            r = _scan_step(surf, i, arc.field, dense, ta, tb, xa, xb, surf(xa), surf(xb), controls)
            if r is not None and (best is None or (r - best[0]) * (tb - ta) < 0):
                best = (r, i)
        if best is not None:
            return best
    return None


def crossing_time(field: SmoothField, surface: SwitchingFunction, r, t_guess: float,
                  t0: float = 0.0, controls: FlowControls = DEFAULT_CONTROLS,
                  max_iter: int = 50) -> float:
    """Solve ``h(phi(tau; r)) = 0`` for ``tau`` by Newton's method.

    ``phi`` is the flow of ``field`` started at ``(r, t0)``; the derivative is
    ``<grad h, X>`` along the solution.
    """
    r = np.asarray(r, dtype=float)
    if abs(surface(r)) <= controls.event_tol:
        return 0.0
    tau = float(t_guess)
    for _ in range(max_iter):
        x = integrate_smooth(field, r, t0, tau, controls).x1 if tau != 0 else r
        F = surface(x)
        if abs(F) <= controls.event_tol:
            return tau
        grad = surface.gradient(x)
        vel = field(x, t0 + tau)
        dF = float(np.dot(grad, vel))
        if abs(dF) < controls.tangency_rel * np.linalg.norm(grad) * np.linalg.norm(vel) or dF == 0:
            raise CrossingTimeError(f"dF/dt = {dF:.3e} degenerate at tau={tau:.6g}",
                                    tau=tau, x=x, derivative=dF)
        step = -F / dF
        tau += step
        if not math.isfinite(tau):
            break
    raise CrossingTimeError(f"Newton for crossing time did not converge from guess {t_guess}",
                            t_guess=t_guess)


class Status(str, enum.Enum):
    COMPLETED = "completed"
    HIT_NON_CROSSING = "hit-non-crossing"
    BLEW_UP = "blew-up"
    LEFT_DOMAIN = "left-domain"
    CAP_EXCEEDED = "cap-exceeded"


@dataclass
class Arc:
    component: int
    t_start: float
    t_end: float
    x_start: np.ndarray
    x_end: np.ndarray
    dense: DenseArc | None = None


@dataclass
class CrossingEvent:
    """Certified crossing; ``pre``/``post`` are in traversal order."""

    t: float
    x: np.ndarray
    surface: int
    pre: int
    post: int
    residual: float
    sign: int
    classification: PointClass
    normal: np.ndarray
    pre_velocity: np.ndarray
    post_velocity: np.ndarray

    @property
    def saltation(self) -> np.ndarray:
        from .variational import saltation_matrix
        return saltation_matrix(self.pre_velocity, self.post_velocity, self.normal)

    def to_dict(self) -> dict:
        return {"t": self.t, "x": self.x.tolist(), "surface": self.surface, "pre": self.pre,
                "post": self.post, "residual": self.residual, "sign": self.sign}


@dataclass
class Trajectory:
    x0: np.ndarray
    t0: float
    T: float
    arcs: list[Arc] = field(default_factory=list)
    events: list[CrossingEvent] = field(default_factory=list)
    status: Status = Status.COMPLETED
    obstruction: dict | None = None

    @property
    def completed(self) -> bool:
        return self.status is Status.COMPLETED

    @property
    def t_end(self) -> float:
        return self.arcs[-1].t_end if self.arcs else self.t0

    @property
    def x_end(self) -> np.ndarray:
        return self.arcs[-1].x_end.copy() if self.arcs else self.x0.copy()

    @property
    def n_events(self) -> int:
        return len(self.events)

    def require_completed(self) -> "Trajectory":
        if not self.completed:
            info = self.obstruction or {}
            raise FlowObstruction(
                f"trajectory from {self.x0} did not complete: {self.status.value} "
                f"{info.get('message', '')}".strip(),
                status=self.status.value, trajectory=self, **{k: v for k, v in info.items() if k != "message"})
        return self

    def __call__(self, t: float) -> np.ndarray:
        for arc in self.arcs:
            lo, hi = sorted((arc.t_start, arc.t_end))
            if lo <= t <= hi:
                if arc.dense is None:
                    raise ValueError("trajectory was built without dense output")
                return arc.dense(t)
        raise ValueError(f"t={t} outside the solved span")

    def sample(self, points_per_arc: int = 50) -> list[tuple[float, np.ndarray, int]]:
        rows = []
        for k, arc in enumerate(self.arcs):
            n = max(2, points_per_arc)
            for t in np.linspace(arc.t_start, arc.t_end, n):
                rows.append((float(t), arc.dense(t) if arc.dense is not None else arc.x_start, k))
        return rows

    def write_csv(self, path, points_per_arc: int = 50) -> None:
        dim = self.x0.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j}" for j in range(dim)] + ["arc"])
            for t, x, k in self.sample(points_per_arc):
                w.writerow([f"{t:.16e}"] + [f"{v:.16e}" for v in x] + [k])

    def event_log(self) -> dict:
        return {"x0": self.x0.tolist(), "t0": self.t0, "T": self.T, "status": self.status.value,
                "x_end": self.x_end.tolist(), "events": [e.to_dict() for e in self.events],
                "obstruction": self.obstruction}

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.event_log(), fh, indent=2, sort_keys=True)


def _obstruct(traj: Trajectory, status: Status, message: str, **info) -> Trajectory:
    traj.status = status
    clean = {k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in info.items()}
    traj.obstruction = {"message": message, **clean}
    return traj


def solve(system: PiecewiseSystem, x0, t0: float, T: float,
          controls: FlowControls = DEFAULT_CONTROLS, keep_dense: bool = True) -> Trajectory:
    """Global solution through crossing points over ``[t0, t0 + T]`` (``T`` of either sign).

    Never raises for obstructions: the returned trajectory carries a status and
    the point and class of the obstruction.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (system.dim,):
        raise ValueError(f"initial state must have shape ({system.dim},)")
    traj = Trajectory(x.copy(), float(t0), float(T))
    t_end = float(t0) + float(T)
    direction = 1 if T >= 0 else -1
    n_surf = len(system.surfaces)
    try:
        cls = classify_point(system, x, t0, tol=controls.membership(x), grad_tol=controls.grad_tol)
    except DomainError as exc:
        return _obstruct(traj, Status.LEFT_DOMAIN, str(exc), x=x, t=t0)
    armed = [True] * n_surf
    if isinstance(cls, Interior):
        comp = cls.component
    elif isinstance(cls, Crossing):
        comp = cls.post if direction > 0 else cls.pre
        armed[cls.surface] = False
    else:
        return _obstruct(traj, Status.HIT_NON_CROSSING, f"initial point is {cls.kind}",
                         x=x, t=t0, point_class=cls.kind)
    if T == 0:
        traj.arcs.append(Arc(comp, t0, t0, x.copy(), x.copy(), DenseArc(system.components[comp], t0, x)))
        return traj
    t = float(t0)
    while True:
        fieldj = system.components[comp]
        arc = DenseArc(fieldj, t, x)
        try:
            hit = _advance(arc, fieldj, t_end, controls, system.surfaces, armed)
        except TangencyError as exc:
            traj.arcs.append(Arc(comp, t, arc.t1, x.copy(), arc.x1.copy(), arc if keep_dense else None))
            return _obstruct(traj, Status.HIT_NON_CROSSING, str(exc), point_class="tangency",
                             **exc.details)
        except CrossingTimeError as exc:
            traj.arcs.append(Arc(comp, t, arc.t1, x.copy(), arc.x1.copy(), arc if keep_dense else None))
            return _obstruct(traj, Status.HIT_NON_CROSSING, str(exc), **exc.details)
        traj.arcs.append(Arc(comp, t, arc.t1, x.copy(), arc.x1.copy(), arc if keep_dense else None))
        if arc.status == "blew-up":
            return _obstruct(traj, Status.BLEW_UP, "state norm overflow or step underflow",
                             x=arc.x1, t=arc.t1)
        if arc.status == "left-domain":
            return _obstruct(traj, Status.LEFT_DOMAIN, "orbit left the domain", x=arc.x1, t=arc.t1)
        if hit is None:
            return traj
        te, xe, i = hit
        if abs(t_end - te) <= 1e-13 * max(1.0, abs(t_end)):
            # endpoint on the switching set; nothing left to integrate
            traj.arcs[-1].t_end = t_end
            return traj
        try:
            ecls = classify_point(system, xe, te, tol=controls.membership(xe), grad_tol=controls.grad_tol)
        except (DomainError, MalformedSystemError) as exc:
            return _obstruct(traj, Status.HIT_NON_CROSSING, str(exc), x=xe, t=te)
        if not isinstance(ecls, Crossing):
            return _obstruct(traj, Status.HIT_NON_CROSSING, f"event point is {ecls.kind}",
                             x=xe, t=te, point_class=ecls.kind, surface=i)
        came_from = ecls.pre if direction > 0 else ecls.post
        nxt = ecls.post if direction > 0 else ecls.pre
        if came_from != comp or ecls.surface != i:
            return _obstruct(traj, Status.HIT_NON_CROSSING,
                             "crossing orientation inconsistent with the active component",
                             x=xe, t=te, surface=i)
        surf = system.surfaces[i]
        try:
            _check_tangency(surf, system.components[nxt], xe, te, controls, i)
        except TangencyError as exc:
            return _obstruct(traj, Status.HIT_NON_CROSSING, str(exc), point_class="tangency",
                             **exc.details)
        normal = surf.gradient(xe)
        traj.events.append(CrossingEvent(
            t=float(te), x=xe.copy(), surface=i, pre=comp, post=nxt, residual=abs(surf(xe)),
            sign=ecls.sign, classification=ecls, normal=normal,
            pre_velocity=system.components[comp](xe, te),
            post_velocity=system.components[nxt](xe, te)))
        if len(traj.events) > controls.max_events:
            return _obstruct(traj, Status.CAP_EXCEEDED,
                             f"more than {controls.max_events} crossings", x=xe, t=te)
        comp = nxt
        x = xe
        t = float(te)
        armed = [True] * n_surf
        armed[i] = False


def flow_map(system: PiecewiseSystem, x0, t0: float, T: float,
             controls: FlowControls = DEFAULT_CONTROLS) -> np.ndarray:
    """Endpoint of :func:`solve`; raises :class:`FlowObstruction` if incomplete."""
    return solve(system, x0, t0, T, controls, keep_dense=False).require_completed().x_end
