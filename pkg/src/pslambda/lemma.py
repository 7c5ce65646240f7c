"""Inclination-lemma machinery: proof constants measured in an adapted chart,
bound verification along inclination traces, C0/C1 distances between disks,
the disk-accumulation experiment and finite-depth preimages of the switching
set for piecewise smooth maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (ChartError, ConvergenceError, DegenerateDiskError, HypothesisViolation,
                     InfeasibleConstantsError, NotTransversalError, PSVFError)
from .manifolds import Disk, InclinationTrace, sigma_clearance
from .maps import SectionMap
from .poincare import SaddleData

__all__ = [
    "Box",
    "ProofConstants",
    "chart_jacobian",
    "remainder_grid",
    "measure_constants",
    "shrink_until_feasible",
    "BoundCheck",
    "BoundReport",
    "verify_bounds",
    "DiskDistance",
    "directed_hausdorff",
    "hausdorff",
    "disk_distance",
    "entry_time",
    "stable_tangent",
    "unstable_tangent",
    "certify_point",
    "ConvergenceRow",
    "ConvergenceTable",
    "lambda_experiment",
    "clip_to",
    "SectionResult",
    "PhaseSweep",
    "phase_sweep",
    "LambdaSet",
    "lambda_set_depth",
]


# -- boxes and constants -----------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]`` in chart coordinates ``(y_s, y_u)``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or any(h < l for l, h in zip(lo, hi)):
            raise ValueError(f"bad box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, rs: float, ru: float) -> "Box":
        return cls((-rs, -ru), (rs, ru))

    def contains(self, y, slack: float = 1e-15) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= np.asarray(self.lo) - slack) and np.all(y <= np.asarray(self.hi) + slack))

    def scaled(self, f: float) -> "Box":
        """Shrink (``f < 1``) toward the origin of the chart."""
        return Box(tuple(f * v for v in self.lo), tuple(f * v for v in self.hi))

    def grid(self, samples: int) -> np.ndarray:
        axes = [np.linspace(l, h, samples) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def as_pair(self):
        return self.lo, self.hi

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}


@dataclass
class ProofConstants:
    """``a``, ``k`` over ``V``, ``k1`` over ``V1`` and everything derived from them."""

    a: float
    k: float
    k1: float
    eta: float
    alpha_s: float
    alpha_u: float
    box_V: Box
    box_V1: Box
    k_grid: float = 0.0
    k1_grid: float = 0.0
    samples: int = 0
    shrink_factor: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def a1(self) -> float:
        return self.a + self.k

    @property
    def b(self) -> float:
        return 1.0 / self.a - self.k

    @property
    def b1(self) -> float:
        return 0.5 * (self.b + 1.0)

    def conditions(self) -> dict[str, tuple[bool, float]]:
        """Each inequality with its margin (positive when satisfied)."""
        b = self.b
        out = {
            "a1 < 1": (self.a1 < 1.0, 1.0 - self.a1),
            "b > 1": (b > 1.0, b - 1.0),
            "k < (b-1)^2/4": (self.k < (b - 1.0) ** 2 / 4.0, (b - 1.0) ** 2 / 4.0 - self.k),
            "k < 1": (self.k < 1.0, 1.0 - self.k),
            # V1 lies inside V, so k1 <= k always; strictness only matters when k > 0
            "k1 < eta": (self.k1 < self.eta, self.eta - self.k1),
            "k1 <= k": (self.k1 <= self.k, self.k - self.k1),
        }
        if self.k > 0:
            out["k1 <= k"] = (self.k1 < self.k or self.k1 == 0.0, self.k - self.k1)
        return out

    @property
    def feasible(self) -> bool:
        return all(ok for ok, _ in self.conditions().values())

    @property
    def failures(self) -> list[str]:
        return [name for name, (ok, _) in self.conditions().items() if not ok]

    def require_feasible(self) -> "ProofConstants":
        if not self.feasible:
            raise InfeasibleConstantsError(
                f"proof constants infeasible: {', '.join(self.failures)}", failures=self.failures,
                shrink_factor=self.shrink_factor, a=self.a, k=self.k, k1=self.k1)
        return self

    def to_dict(self) -> dict:
        return {"a": self.a, "k": self.k, "k1": self.k1, "eta": self.eta, "a1": self.a1, "b": self.b,
                "b1": self.b1, "alpha_s": self.alpha_s, "alpha_u": self.alpha_u,
                "k_grid": self.k_grid, "k1_grid": self.k1_grid, "samples": self.samples,
                "box_V": self.box_V.to_dict(), "box_V1": self.box_V1.to_dict(),
                "feasible": self.feasible,
                "conditions": {n: {"ok": ok, "margin": m} for n, (ok, m) in self.conditions().items()},
                "shrink_factor": self.shrink_factor}


def chart_jacobian(pmap: SectionMap, chart, y) -> np.ndarray:
    """Jacobian of ``psi o P o psi^-1`` at chart point ``y``."""
    x = chart.inverse(np.asarray(y, dtype=float))
    Px, J = pmap.evaluate_with_jacobian(x)
    return chart.jacobian(Px) @ J @ np.linalg.inv(chart.jacobian(x))


def remainder_grid(pmap: SectionMap, chart, box: Box, samples: int, linear: np.ndarray,
                   jac: Callable | None = None) -> np.ndarray:
    """``|DF(y) - linear|`` entrywise on a ``samples x samples`` grid (shape ``(m, m, 2, 2)``)."""
    jac = jac or (lambda y: chart_jacobian(pmap, chart, y))
    pts = box.grid(samples)
    out = np.empty(pts.shape[:-1] + (2, 2))
    for idx in np.ndindex(*pts.shape[:-1]):
        try:
            out[idx] = np.abs(jac(pts[idx]) - linear)
        except PSVFError as exc:
            raise ChartError(f"chart Jacobian undefined at grid point {pts[idx]}: {exc}",
                             y=pts[idx]) from exc
    return out


def _grid_bound(R: np.ndarray, inflate: bool) -> tuple[float, float]:
    """Grid maximum, and the maximum plus the largest jump between grid neighbours.

    The inflated value bounds the remainder between nodes as long as it
    varies by no more than one neighbour jump across a cell.
    """
    top = float(R.max())
    if not inflate:
        return top, top
    jump = 0.0
    for ax in range(R.ndim - 2):
        if R.shape[ax] > 1:
            jump = max(jump, float(np.abs(np.diff(R, axis=ax)).max()))
    return top, top + jump


def measure_constants(pmap: SectionMap, chart, saddle: SaddleData | None, box_V: Box, box_V1: Box,
                      samples: int = 21, eta: float = 1e-2, inflate: bool = True,
                      multipliers: tuple[float, float] | None = None, estimate_shrink: bool = True,
                      jac: Callable | None = None) -> ProofConstants:
    """Grid estimate of ``k`` (over ``V``) and ``k1`` (over ``V1``).

    The remainder is the chart Jacobian minus ``diag(alpha_s, alpha_u)``;
    ``a = max(|alpha_s|, 1/|alpha_u|)``. If the result is infeasible and
    ``estimate_shrink`` is set, the factor by which both boxes would have to
    shrink is estimated by bisection and stored in ``shrink_factor``.
    """
    if multipliers is None:
        if saddle is None:
            raise ValueError("need the saddle or explicit multipliers")
        multipliers = (float(np.real(saddle.stable_values[0])), float(np.real(saddle.unstable_values[0])))
    a_s, a_u = multipliers
    a = max(abs(a_s), 1.0 / abs(a_u))
    lin = np.diag([a_s, a_u])
    RV = remainder_grid(pmap, chart, box_V, samples, lin, jac)
    RV1 = remainder_grid(pmap, chart, box_V1, samples, lin, jac)
    k_grid, k = _grid_bound(RV, inflate)
    k1_grid, k1 = _grid_bound(RV1, inflate)
    consts = ProofConstants(a, k, k1, eta, a_s, a_u, box_V, box_V1, k_grid, k1_grid, samples)
    if not consts.feasible and estimate_shrink:
        consts.shrink_factor = _shrink_estimate(pmap, chart, multipliers, box_V, box_V1, samples, eta,
                                                inflate, jac)
    return consts


def _shrink_estimate(pmap, chart, multipliers, box_V, box_V1, samples, eta, inflate, jac,
                     rounds: int = 8) -> float | None:
    """Bisect on the common scale factor of both boxes (coarser grid for speed)."""
    m = max(5, samples // 2)
    lo, hi = 0.0, 1.0
    found = None
    for _ in range(rounds):
        f = 0.5 * (lo + hi)
        c = measure_constants(pmap, chart, None, box_V.scaled(f), box_V1.scaled(f), m, eta, inflate,
                              multipliers, estimate_shrink=False, jac=jac)
        if c.feasible:
            found, lo = f, f
        else:
            hi = f
    return found


def shrink_until_feasible(pmap: SectionMap, chart, saddle: SaddleData, box_V: Box, box_V1: Box,
                          samples: int = 21, eta: float = 1e-2, factor: float = 0.5, max_rounds: int = 8,
                          **kw) -> ProofConstants:
    """Shrink both boxes geometrically until the measured constants are feasible."""
    V, V1 = box_V, box_V1
    history = []
    for r in range(max_rounds + 1):
        c = measure_constants(pmap, chart, saddle, V, V1, samples, eta, estimate_shrink=False, **kw)
        history.append({"box_V": V.to_dict(), "box_V1": V1.to_dict(), "k": c.k, "k1": c.k1,
                        "failures": c.failures})
        if c.feasible:
            c.meta["shrink_history"] = history
            c.shrink_factor = factor ** r
            return c
        V, V1 = V.scaled(factor), V1.scaled(factor)
    raise InfeasibleConstantsError("no feasible boxes after shrinking", failures=c.failures,
                                   history=history)


# -- bound verification -------------------------------------------------------

@dataclass
class BoundCheck:
    name: str
    n: int
    lhs: float
    rhs: float
    ok: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "lhs": self.lhs, "rhs": self.rhs, "ok": self.ok,
                "margin": self.margin}


@dataclass
class BoundReport:
    checks: list[BoundCheck]
    n0: int | None
    n1: int | None
    n2: int | None
    excluded: list[int]
    constants: dict
    label: str = ""

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.ok]

    def by_name(self, name: str) -> list[BoundCheck]:
        return [c for c in self.checks if c.name == name]

    def names(self) -> set[str]:
        return {c.name for c in self.checks}

    def to_dict(self) -> dict:
        return {"label": self.label, "passed": self.passed, "n0": self.n0, "n1": self.n1, "n2": self.n2,
                "excluded": self.excluded, "constants": self.constants,
                "checks": [c.to_dict() for c in self.checks]}


def _leq(lhs, rhs, rel, abs_):
    return bool(lhs <= rhs + abs_ + rel * abs(rhs))


def verify_bounds(trace: InclinationTrace, constants: ProofConstants, eta: float | None = None,
                  on_stable: bool = True, rel_tol: float = 1e-9, abs_tol: float = 1e-12,
                  stretch_tol: float = 1e-6, label: str = "") -> BoundReport:
    """Check the inclination bound chain along one trace.

    ``on_stable`` declares that the base points lie on the stable manifold
    (the one-step inclination recursion and the geometric bound need this).
    Inclination checks use the longest prefix of the trace inside ``V``;
    the ``mu`` checks start at ``n1``, the first index past ``n0`` inside
    ``V1`` (index 0 when ``on_stable`` is false), and run while the trace
    stays in ``V1``. Iterates outside the boxes are excluded and listed.
    """
    c = constants
    eta = c.eta if eta is None else eta
    a1, b, b1, k, k1 = c.a1, c.b, c.b1, c.k, c.k1
    recs = trace.records
    inV = [c.box_V.contains(r.chart_point) for r in recs]
    inV1 = [c.box_V1.contains(r.chart_point) for r in recs]
    lam = [r.inclination for r in recs]
    checks: list[BoundCheck] = []
    excluded = [r.n for r, ok in zip(recs, inV) if not ok]

    def add(name, n, lhs, rhs, rel=rel_tol, abs_=abs_tol):
        checks.append(BoundCheck(name, n, float(lhs), float(rhs), _leq(lhs, rhs, rel, abs_)))

    n_V = 0
    while n_V < len(recs) and inV[n_V]:
        n_V += 1
    n0 = None
    if on_stable and n_V:
        lam0 = lam[0]
        for n in range(1, n_V):
            add("one-step recursion", n, lam[n], (a1 * lam[n - 1] + k) / b)
            add("geometric bound", n, lam[n], lam0 / b ** n + k / (b - 1.0))
        threshold = (b - 1.0) / 4.0
        for n in range(n_V):
            if all(lam[m] <= threshold for m in range(n, n_V)):
                n0 = n
                break
        checks.append(BoundCheck("threshold existence", -1 if n0 is None else n0,
                                 min(lam[:n_V]) if n_V else math.inf, threshold, n0 is not None))
    # mu phase
    n1 = None
    start = (n0 if n0 is not None else None) if on_stable else 0
    if start is not None:
        for n in range(start, len(recs)):
            if inV1[n]:
                n1 = n
                break
            if not inV[n]:
                break
    n2 = None
    if n1 is not None:
        mu = lam
        mu0 = mu[n1]
        mu_star = (b - 1.0) / 2.0
        add("seed condition", n1, mu0, mu_star)
        if mu0 <= mu_star:
            ratio = math.log(mu_star / eta) / math.log(b1) if eta < mu_star else 0.0
            n2 = max(0, math.ceil(ratio))
        end = n1
        while end + 1 < len(recs) and inV1[end + 1]:
            end += 1
        for n in range(n1 + 1, end + 1):
            m = n - n1
            prev = mu[n - 1]
            denom = (1.0 / c.a - k) - k * prev
            rhs10 = ((c.a + k) * prev + k1) / denom if denom > 0 else math.inf
            add("mu one-step recursion", n, mu[n], rhs10)
            add("mu preservation", n, mu[n], mu_star)
            add("mu geometric bound", n, mu[n], mu0 / b1 ** m + k1 / (b1 - 1.0))
            if n2 is not None and m >= n2:
                add("mu final bound", n, mu[n], (1.0 + 1.0 / (b1 - 1.0)) * eta)
        excluded.extend(r.n for r in recs[end + 1:] if inV[r.n] and r.n > n1 and not inV1[r.n])
    # stretching: every in-V iterate past n0 whose successor exists
    s_from = (n0 if n0 is not None else n_V) if on_stable else 0
    for n in range(s_from, len(recs) - 1):
        if not inV[n]:
            continue
        st = recs[n].stretch
        if st is None:
            continue
        add("stretch", n, b - k * lam[n], st, rel=0.0, abs_=stretch_tol)
    return BoundReport(checks, n0, n1, n2, sorted(set(excluded)), c.to_dict(), label)


# -- distances between disks ----------------------------------------------------

@dataclass(frozen=True)
class DiskDistance:
    """``c0``: two-sided Hausdorff distance of the polylines; ``c1``: largest
    principal angle between tangent frames at matched normalized arc length."""

    c0: float
    c1: float
    reversed: bool = False

    def to_dict(self) -> dict:
        return {"c0": self.c0, "c1": self.c1, "reversed": self.reversed}


def _point_segment_dist(pts: np.ndarray, P0: np.ndarray, P1: np.ndarray) -> np.ndarray:
    """Distances ``(k, m)`` from ``k`` points to ``m`` segments."""
    d = P1 - P0
    dd = np.einsum("ij,ij->i", d, d)
    w = pts[:, None, :] - P0[None, :, :]
    t = np.einsum("kij,ij->ki", w, d) / np.where(dd == 0, 1.0, dd)
    t = np.clip(t, 0.0, 1.0)
    diff = w - t[..., None] * d[None, :, :]
    return np.sqrt(np.einsum("kij,kij->ki", diff, diff))


def directed_hausdorff(A: np.ndarray, B: np.ndarray, tol: float = 1e-14) -> float:
    """``sup_{a in A} dist(a, B)`` for polylines ``A``, ``B`` (node arrays).

    Along a segment of ``A`` the distance to each segment of ``B`` is convex,
    so ``min_j max(f_j(t0), f_j(t1))`` bounds the distance on ``[t0, t1]``
    from above; subintervals whose bound does not beat the running maximum
    are pruned and the rest bisected.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if len(B) == 1:
        return float(np.max(np.linalg.norm(A - B[0], axis=1)))
    P0, P1 = B[:-1], B[1:]
    F = _point_segment_dist(A, P0, P1)
    best = float(F.min(axis=1).max())
    if len(A) == 1:
        return best
    stack = [(A[i], A[i + 1], F[i], F[i + 1]) for i in range(len(A) - 1)]
    while stack:
        a0, a1, f0, f1 = stack.pop()
        ub = float(np.min(np.maximum(f0, f1)))
        if ub <= best + tol:
            continue
        am = 0.5 * (a0 + a1)
        fm = _point_segment_dist(am[None, :], P0, P1)[0]
        best = max(best, float(fm.min()))
        if np.linalg.norm(a1 - a0) <= tol:
            continue
        stack.append((a0, am, f0, fm))
        stack.append((am, a1, fm, f1))
    return best


def hausdorff(A: np.ndarray, B: np.ndarray, tol: float = 1e-14) -> float:
    return max(directed_hausdorff(A, B, tol), directed_hausdorff(B, A, tol))


def _frames_on_grid(disk: Disk, grid: np.ndarray) -> np.ndarray:
    s = disk.arclength()
    L = s[-1]
    if not L > 0:
        raise DegenerateDiskError("disk has zero length")
    # line directions: fix signs along the disk before interpolating
    t = _consistent_signs(disk.tangents)
    out = np.empty((grid.size, t.shape[1]))
    for j in range(t.shape[1]):
        out[:, j] = np.interp(grid, s / L, t[:, j])
    n = np.linalg.norm(out, axis=1)
    if np.any(n < 1e-12):
        raise DegenerateDiskError("interpolated tangent vanished")
    return out / n[:, None]


def _consistent_signs(t: np.ndarray) -> np.ndarray:
    t = t.copy()
    for i in range(1, len(t)):
        if np.dot(t[i], t[i - 1]) < 0:
            t[i] = -t[i]
    return t


def _line_angles(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Angles between the lines spanned by rows (``atan2`` form, accurate near 0)."""
    dot = np.abs(np.einsum("ij,ij->i", t1, t2))
    if t1.shape[1] == 2:
        cross = np.abs(t1[:, 0] * t2[:, 1] - t1[:, 1] * t2[:, 0])
    else:
        cross = np.linalg.norm(t1 - np.einsum("i,ij->ij", np.einsum("ij,ij->i", t1, t2), t2), axis=1)
    return np.arctan2(cross, dot)


def _frame_angle(F1: np.ndarray, F2: np.ndarray) -> float:
    """Largest principal angle between the spans of two frames (rows = vectors)."""
    Q1, _ = np.linalg.qr(F1.T)
    Q2, _ = np.linalg.qr(F2.T)
    sv = np.linalg.svd(Q1.T @ Q2, compute_uv=False)
    return float(np.arccos(np.clip(sv.min(), -1.0, 1.0)))


def _validate_disk(d: Disk):
    seg = np.linalg.norm(np.diff(d.nodes, axis=0), axis=1)
    if len(d) < 2 or np.any(seg <= 0):
        raise DegenerateDiskError("disk mesh is not injective (repeated nodes)")
    norms = np.linalg.norm(d.frames, axis=-1)
    if np.any(norms < 1e-12) or not np.all(np.isfinite(d.frames)):
        raise DegenerateDiskError("disk has a degenerate tangent frame")


def disk_distance(D1: Disk, D2: Disk, grid: int = 4097, tol: float = 1e-14) -> DiskDistance:
    """C0/C1 distance between two disks.

    For curves the C1 part compares tangent lines on a fixed grid of
    normalized arc length, taking the better of the two orientations; the
    grid is fixed so the result satisfies the triangle inequality.
    Higher-dimensional disks are compared node by node.
    """
    if D1.u != D2.u:
        raise ValueError(f"disk dimensions differ ({D1.u} vs {D2.u})")
    _validate_disk(D1)
    _validate_disk(D2)
    c0 = hausdorff(D1.nodes, D2.nodes, tol)
    if D1.u > 1:
        if len(D1) != len(D2):
            raise ValueError("higher-dimensional disks are matched node by node")
        c1 = max(_frame_angle(a, b) for a, b in zip(D1.frames, D2.frames))
        return DiskDistance(c0, c1)
    g = np.linspace(0.0, 1.0, grid)
    t1 = _frames_on_grid(D1, g)
    t2 = _frames_on_grid(D2, g)
    fwd = float(_line_angles(t1, t2).max())
    bwd = float(_line_angles(t1, t2[::-1]).max())
    return DiskDistance(c0, min(fwd, bwd), bwd < fwd)


# -- disk accumulation experiment ----------------------------------------------

def _chart_point(chart, x):
    try:
        return chart.forward(x)
    except ChartError:
        return None


def _advance(pmap: SectionMap, x, d, steps: int, direction: int = 1):
    from .manifolds import advance_node
    for _ in range(steps):
        x, d, _ = advance_node(pmap, x, d, direction)
    return x, d


def entry_time(pmap: SectionMap, chart, box: Box, x, max_iter: int = 60) -> tuple[int, np.ndarray]:
    """Smallest ``N`` with ``P^N(x)`` inside ``box`` (chart coordinates)."""
    x = np.asarray(x, dtype=float)
    for n in range(max_iter + 1):
        y = _chart_point(chart, x)
        if y is not None and box.contains(y):
            return n, x
        x = pmap.evaluate(x)
    raise HypothesisViolation(f"orbit did not enter the chart box within {max_iter} iterates",
                              hypothesis="q must lie on the stable manifold of the saddle")


def stable_tangent(pmap: SectionMap, chart, x, N: int) -> np.ndarray:
    """Tangent of ``W^s`` at ``x``: the chart's stable axis at ``P^N(x)`` pulled back by ``DP^N``.

    Pulling back damps any unstable error in the axis direction, so the
    result does not depend on the accuracy of the forward orbit beyond
    where it lands.
    """
    orbit = [np.asarray(x, dtype=float)]
    Js = []
    for _ in range(N):
        y, J = pmap.evaluate_with_jacobian(orbit[-1])
        orbit.append(y)
        Js.append(J)
    e = np.linalg.solve(chart.jacobian(orbit[-1]), np.array([1.0, 0.0]))
    for J in reversed(Js):
        e = np.linalg.solve(J, e)
        e = e / np.linalg.norm(e)
    return e


def unstable_tangent(pmap: SectionMap, chart, x, M: int) -> np.ndarray:
    """Tangent of ``W^u`` at ``x``: the unstable axis at ``P^-M(x)`` pushed forward by ``DP^M``."""
    orbit = [np.asarray(x, dtype=float)]
    for _ in range(M):
        orbit.append(pmap.inverse(orbit[-1]))
    e = np.linalg.solve(chart.jacobian(orbit[-1]), np.array([0.0, 1.0]))
    for z in reversed(orbit[1:]):
        _, J = pmap.evaluate_with_jacobian(z)
        e = J @ e
        e = e / np.linalg.norm(e)
    return e


def _line_angle(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.arctan2(abs(a[0] * b[1] - a[1] * b[0]), abs(np.dot(a, b))))


@dataclass
class ConvergenceRow:
    n: int
    c0: float
    c1: float
    mu_max: float
    radius: float
    nodes: int
    window: tuple

    def to_dict(self) -> dict:
        return {"n": self.n, "c0": self.c0, "c1": self.c1, "mu_max": self.mu_max, "radius": self.radius,
                "nodes": self.nodes, "window": list(self.window)}


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    q: np.ndarray
    angle: float
    clearance: float
    N: int
    m: int
    n2: int | None
    eta: float
    target_meets_sigma: bool
    images: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def ns(self) -> np.ndarray:
        return np.array([r.n for r in self.rows])

    @property
    def c0(self) -> np.ndarray:
        return np.array([r.c0 for r in self.rows])

    @property
    def c1(self) -> np.ndarray:
        return np.array([r.c1 for r in self.rows])

    def first_below(self, column: str, eta: float | None = None) -> int | None:
        eta = self.eta if eta is None else eta
        for r in self.rows:
            if getattr(r, column) < eta:
                return r.n
        return None

    def monotone_past(self, n_from: int | None = None, slack: float = 0.1, column: str = "c1") -> bool:
        """Non-increasing from ``n_from`` (default ``n2``) on, allowing ``slack`` relative growth."""
        n_from = self.n2 if n_from is None else n_from
        vals = [getattr(r, column) for r in self.rows if n_from is None or r.n >= n_from]
        return all(b <= (1.0 + slack) * a for a, b in zip(vals, vals[1:]))

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "C0", "C1", "mu_max", "radius_n"])
            for r in self.rows:
                w.writerow([r.n, f"{r.c0:.16e}", f"{r.c1:.16e}", f"{r.mu_max:.16e}", f"{r.radius:.16e}"])

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "angle": self.angle, "clearance": self.clearance, "N": self.N,
                "m": self.m, "n2": self.n2, "eta": self.eta, "target_meets_sigma": self.target_meets_sigma,
                "rows": [r.to_dict() for r in self.rows], **self.meta}


def certify_point(pmap: SectionMap, chart, q, direction, box_V: Box, clearance: float = 1e-4,
                  angle_threshold: float = 1e-3, ws_tol: float = 1e-5, max_iter: int = 60):
    """Check the hypotheses on ``q``: off the switching set, on ``W^s`` and
    crossed transversally by ``direction``. Returns ``(N, q_N, angle, clearance, e_s)``."""
    q = np.asarray(q, dtype=float)
    surfaces = tuple(getattr(pmap, "surfaces", ()))
    clr = sigma_clearance(surfaces, q)
    if clr < clearance:
        raise HypothesisViolation(f"q lies {clr:.3e} from the switching set (< {clearance:g})",
                                  q=q, clearance=clr)
    N, qN = entry_time(pmap, chart, box_V, q, max_iter)
    yN = chart.forward(qN)
    # an orbit on W^s reaches the box with a vanishing unstable coordinate
    if abs(yN[1]) > ws_tol:
        raise HypothesisViolation(f"q is not on the stable manifold (|y_u| = {abs(yN[1]):.3e} at entry)",
                                  hypothesis="q must lie on the stable manifold of the saddle", q=q)
    e_s = stable_tangent(pmap, chart, q, N)
    angle = _line_angle(e_s, direction)
    if angle < angle_threshold:
        raise HypothesisViolation(f"the disk meets W^s at angle {angle:.3e} < {angle_threshold:g}",
                                  hypothesis="the disk must cross W^s transversally at q", angle=angle)
    return N, qN, angle, clr, e_s


def _pull_back_target(pmap, chart, box: Box, D: Disk, m: int | None, max_m: int):
    ends = [D.nodes[0], D.nodes[-1]]
    for mm in range(max_m + 1):
        if m is not None and mm != m:
            pts = None
        else:
            pts = [pmap.iterate(D.nodes[i], -mm) for i in range(len(D))]
            ys = [_chart_point(chart, x) for x in pts]
            if all(y is not None and box.contains(y) for y in ys):
                return mm, np.array(ys)
            if m is not None:
                raise HypothesisViolation(f"P^-{m}(D) does not fit in the chart box",
                                          hypothesis="target disk must pull back into the chart box")
    raise HypothesisViolation(f"P^-m(D) does not fit in the chart box for m <= {max_m}",
                              hypothesis="target disk must pull back into the chart box", ends=ends)


def clip_to(image: Disk, D: Disk) -> Disk:
    """Restrict a curve running alongside ``D`` to the strip between the
    normal lines at ``D``'s end nodes (interpolating the cut nodes)."""
    x, t, p = image.nodes, image.tangents, image.params
    # orient the image like D
    if np.dot(x[-1] - x[0], D.nodes[-1] - D.nodes[0]) < 0:
        x, t, p = x[::-1], t[::-1], p[::-1]
    t = _consistent_signs(t)
    a0, ta = D.nodes[0], D.tangents[0] * np.sign(np.dot(D.tangents[0], D.nodes[1] - D.nodes[0]))
    b0, tb = D.nodes[-1], D.tangents[-1] * np.sign(np.dot(D.tangents[-1], D.nodes[-1] - D.nodes[-2]))
    f = (x - a0) @ ta
    g = (x - b0) @ tb

    def cut(vals, i):
        lam = vals[i] / (vals[i] - vals[i + 1])
        tt = (1 - lam) * t[i] + lam * t[i + 1]
        return (1 - lam) * x[i] + lam * x[i + 1], tt / np.linalg.norm(tt), (1 - lam) * p[i] + lam * p[i + 1]

    i0 = np.nonzero((f[:-1] < 0) & (f[1:] >= 0))[0]
    i1 = np.nonzero((g[:-1] <= 0) & (g[1:] > 0))[0]
    if not i0.size or not i1.size:
        raise ConvergenceError("image does not cover the target window", covered=(bool(i0.size), bool(i1.size)))
    i0, i1 = int(i0[0]), int(i1[-1])
    start, end = cut(f, i0), cut(g, i1)
    keep = slice(i0 + 1, i1 + 1)
    inner = (f[keep] > 0) & (g[keep] < 0)
    nodes = np.vstack([start[0], x[keep][inner], end[0]])
    frames = np.vstack([start[1], t[keep][inner], end[1]])
    params = np.concatenate([[start[2]], p[keep][inner], [end[2]]])
    return Disk(nodes, params, frames, image.provenance, image.depth, meta=dict(image.meta))


def lambda_experiment(pmap: SectionMap, saddle: SaddleData | None, chart, delta: Disk, D: Disk,
                      schedule: Sequence[int], box_V: Box, eta: float = 1e-2,
                      constants: ProofConstants | None = None, m: int | None = None, max_m: int = 20,
                      clearance: float = 1e-4, angle_threshold: float = 1e-3, cover: float = 1.1,
                      newton_iter: int = 4, max_iter: int = 60) -> ConvergenceTable:
    """Iterate shrinking sub-disks of ``delta`` and measure their distance to ``D``.

    ``delta`` is a straight disk whose centre node ``q`` lies on ``W^s``.
    ``D`` is pulled back ``m`` steps into the chart box ``V``; for each ``n``
    the sub-disk ``Delta_n`` (radius reported) is chosen so that
    ``P^(N+n)(Delta_n)`` covers the pulled-back target ``cover`` times over in
    the unstable coordinate, its nodes are placed at the target nodes'
    unstable coordinates (Newton in the disk parameter), pushed forward ``m``
    more steps, and compared with ``D``.
    """
    if delta.u != 1 or D.u != 1:
        raise ValueError("the experiment is implemented for curves (u = 1)")
    centre = np.argmin(np.abs(delta.params))
    q = delta.nodes[centre]
    e = delta.tangents[centre]
    N, qN, angle, clr, e_s = certify_point(pmap, chart, q, e, box_V, clearance, angle_threshold,
                                           max_iter=max_iter)
    m, Dy = _pull_back_target(pmap, chart, box_V, D, m, max_m)
    targets = Dy[:, 1]
    if not (np.all(np.diff(targets) > 0) or np.all(np.diff(targets) < 0)):
        raise HypothesisViolation("pulled-back target is not a graph over the unstable axis",
                                  hypothesis="target disk must lie on W^u near the saddle")
    if np.any(targets == 0) or targets[0] * targets[-1] <= 0:
        raise HypothesisViolation("pulled-back target must stay on one side of W^s",
                                  hypothesis="target disk must avoid the saddle")
    # two margin targets past each end; the image is clipped back to D's ends
    lo_step, hi_step = targets[1] - targets[0], targets[-1] - targets[-2]
    ext = np.concatenate([[targets[0] - 2 * lo_step, targets[0] - lo_step], targets,
                          [targets[-1] + hi_step, targets[-1] + 2 * hi_step]])
    ext = ext[ext * targets[0] > 0]
    far = float(ext[np.argmax(np.abs(ext))])
    near = float(np.min(np.abs(ext)))
    surfaces = tuple(getattr(pmap, "surfaces", ()))
    meets_sigma = bool(len(D.sigma_segments(surfaces)))

    def yu_of(sigma, steps):
        x = pmap.iterate(q + sigma * e, steps)
        return chart.forward(x)[1]

    rows, images = [], []
    s_star = 0.0
    for n in sorted(schedule):
        steps = N + n
        # the crossing with W^s is located afresh at every depth: each extra
        # iterate magnifies its error by the unstable multiplier
        for _ in range(newton_iter + 2):
            x0, d0 = _advance(pmap, q + s_star * e, e, steps)
            y0 = chart.forward(x0)
            rate = float(chart.push(x0, d0)[1])
            if rate == 0:
                raise NotTransversalError("image tangent has no unstable component", n=n)
            if abs(y0[1]) <= 1e-2 * near:
                break
            s_star -= y0[1] / rate
        else:
            raise ConvergenceError(f"could not locate the stable-manifold crossing at n = {n}", n=n)
        sgn = math.copysign(1.0, far / rate)
        r = cover * abs(far / rate)
        ok = None
        for _ in range(60):
            try:
                reach = sgn * yu_of(s_star + sgn * r, steps) / far
            except PSVFError:
                reach = -math.inf
            if reach >= cover:
                ok = r
                break
            r *= 1.5 if reach > 0 else 0.5
        if ok is None:
            raise ConvergenceError(f"could not size the sub-disk at n = {n}", n=n)
        # place nodes at the target unstable coordinates: secant guess, then Newton
        slope = (yu_of(s_star + sgn * r, steps) - y0[1]) / (sgn * r)
        nodes, frames, sig_list, mu_max = [], [], [], 0.0
        for tgt in ext:
            s = float(s_star + (tgt - y0[1]) / slope)
            for it in range(newton_iter + 1):
                x, d = _advance(pmap, q + s * e, e, steps)
                resid = chart.forward(x)[1] - tgt
                if it == newton_iter or abs(resid) <= 1e-13 * abs(tgt):
                    break
                s -= resid / chart.push(x, d)[1]
            w = chart.push(x, d)
            # the disk parameter is quantized at the spacing of doubles near q;
            # slide along the image tangent to the exact target (first order)
            x = x - (resid / w[1]) * d
            mu_max = max(mu_max, abs(w[0]) / abs(w[1]))
            x, d = _advance(pmap, x, d, m)
            nodes.append(x)
            frames.append(d / np.linalg.norm(d))
            sig_list.append(s)
        image = clip_to(Disk(np.array(nodes), np.array(sig_list), np.array(frames),
                             provenance=f"image-{n}", depth=steps + m), D)
        dist = disk_distance(image, D)
        rows.append(ConvergenceRow(n, dist.c0, dist.c1, mu_max, ok, len(nodes),
                                   (float(min(sig_list)), float(max(sig_list)))))
        images.append(image)
    n2 = None
    if constants is not None:
        b1 = constants.b1
        mu_star = (constants.b - 1.0) / 2.0
        n2 = max(0, math.ceil(math.log(mu_star / eta) / math.log(b1))) if eta < mu_star else 0
        n2 += _entry_offset(pmap, chart, qN, constants.box_V1)
    return ConvergenceTable(rows, q, angle, clr, N, m, n2, eta, meets_sigma, images,
                            {"stable_tangent": e_s.tolist()})


def _entry_offset(pmap, chart, x, box: Box, max_iter: int = 60) -> int:
    """Iterates until the stable-manifold orbit of ``x`` enters ``box`` (projected onto ``W^s``)."""
    for n in range(max_iter + 1):
        y = chart.forward(x)
        if box.contains(np.array([y[0], 0.0])):
            return n
        x = chart.inverse(np.array([chart.forward(pmap.evaluate(x))[0], 0.0]))
    return max_iter


# -- persistence across phase sections -----------------------------------------

@dataclass
class SectionResult:
    phase: float
    point: np.ndarray
    saddle: np.ndarray | None
    clearance: float
    angle: float
    unstable_residual: float
    stable_residual: float
    transversal: bool
    error: str | None = None

    def to_dict(self) -> dict:
        return {"phase": self.phase, "point": self.point.tolist(),
                "saddle": None if self.saddle is None else self.saddle.tolist(),
                "clearance": self.clearance, "angle": self.angle,
                "unstable_residual": self.unstable_residual, "stable_residual": self.stable_residual,
                "transversal": self.transversal, "error": self.error}


@dataclass
class PhaseSweep:
    sections: list[SectionResult]
    angle_threshold: float
    tol: float

    @property
    def passed(self) -> int:
        return sum(s.transversal for s in self.sections)

    def failures(self) -> list[SectionResult]:
        return [s for s in self.sections if not s.transversal]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "total": len(self.sections), "angle_threshold": self.angle_threshold,
                "tol": self.tol, "sections": [s.to_dict() for s in self.sections]}


def _min_distance_orbit(pmap, x, target, n, direction):
    """Closest approach of ``P^(+-k)(x)`` to ``target`` for ``k <= n``, and its index."""
    best, arg = float(np.linalg.norm(x - target)), 0
    for k in range(1, n + 1):
        try:
            x = pmap.step(x, direction)
        except PSVFError:
            break
        d = float(np.linalg.norm(x - target))
        if d < best:
            best, arg = d, k
    return best, arg


def phase_sweep(ext, q, t0: float, saddle_guess, sections: int = 32, angle_threshold: float = 1e-3,
                tol: float = 1e-4, max_iter: int = 12, controls=None) -> PhaseSweep:
    """Carry a transversal homoclinic point ``q`` of the phase-``t0`` map to
    ``sections`` equally spaced phases and re-certify it at each one.

    At phase ``t`` the point is ``q^t = Phi(t - t0; q)``; it must return
    within ``tol`` of the saddle ``p^t`` under both forward and backward
    iteration, and the tangents of ``W^u`` (unstable eigenvector pushed
    forward along the backward orbit) and ``W^s`` (stable eigenvector pulled
    back along the forward orbit) must meet at an angle of at least
    ``angle_threshold``.
    """
    from .flow import DEFAULT_CONTROLS
    from .manifolds import adapted_coordinates
    from .poincare import PoincareMap, saddle_phase_family
    controls = controls or DEFAULT_CONTROLS
    T = ext.period
    phases = [t0 + j * T / sections for j in range(sections)]
    family = saddle_phase_family(ext, phases, saddle_guess, controls)
    surfaces = tuple(ext.surfaces)
    out = []
    x = np.asarray(q, dtype=float)
    t_prev = t0
    for t, sd in zip(phases, family):
        if t > t_prev:
            x = ext.flow(x, t_prev, t - t_prev, controls)[0]
            t_prev = t
        clr = sigma_clearance(surfaces, x)
        if isinstance(sd, dict):
            out.append(SectionResult(t, x.copy(), None, clr, 0.0, math.inf, math.inf, False,
                                     f"saddle continuation failed: {sd['message']}"))
            continue
        pm = PoincareMap(ext, t, controls)
        p = sd.point
        try:
            du, M = _min_distance_orbit(pm, x, p, max_iter, -1)
            ds, N = _min_distance_orbit(pm, x, p, max_iter, 1)
            chart = adapted_coordinates(sd)
            e_u = unstable_tangent(pm, chart, x, M)
            e_s = stable_tangent(pm, chart, x, N)
            angle = _line_angle(e_u, e_s)
            ok = du <= tol and ds <= tol and angle >= angle_threshold
            out.append(SectionResult(t, x.copy(), p.copy(), clr, angle, du, ds, ok))
        except PSVFError as exc:
            out.append(SectionResult(t, x.copy(), p.copy(), clr, 0.0, math.inf, math.inf, False,
                                     f"{exc.kind}: {exc}"))
    return PhaseSweep(out, angle_threshold, tol)


# -- finite-depth preimages of the switching set --------------------------------

@dataclass
class LambdaSet:
    """Grid approximation of ``F^-n(Sigma)``, ``n <= depth``.

    ``level[i, j]`` is the smallest ``n`` at which grid point ``(xs[i], ys[j])``
    was marked (``-1`` if never); ``flagged`` marks points whose orbit
    could not be evaluated to full depth.
    """

    xs: np.ndarray
    ys: np.ndarray
    level: np.ndarray
    flagged: np.ndarray
    depth: int

    def mask(self, n: int | None = None) -> np.ndarray:
        n = self.depth if n is None else n
        return (self.level >= 0) & (self.level <= n)

    def points(self, n: int | None = None) -> np.ndarray:
        i, j = np.nonzero(self.mask(n))
        return np.column_stack([self.xs[i], self.ys[j]])

    def distance_to(self, x, n: int | None = None) -> float:
        """Distance from ``x`` to the nearest marked grid point (inf if none)."""
        pts = self.points(n)
        if not len(pts):
            return math.inf
        return float(np.min(np.linalg.norm(pts - np.asarray(x, dtype=float), axis=1)))

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "level", "flagged"])
            for i, j in zip(*np.nonzero(self.mask() | self.flagged)):
                w.writerow([f"{self.xs[i]:.16e}", f"{self.ys[j]:.16e}", int(self.level[i, j]),
                            int(self.flagged[i, j])])


def lambda_set_depth(F, surfaces, depth: int, box, resolution, tol: float = 0.0) -> LambdaSet:
    """Mark grid points near ``F^-n(Sigma)`` for ``n = 0..depth``.

    A point lies on ``F^-n(Sigma)`` iff ``h(F^n(x)) = 0``, so the grid is
    pushed forward and, at each depth, a node is marked when ``|h o F^n|``
    is within ``tol`` or changes sign towards a 4-neighbour whose value is
    larger in modulus (the node nearer to the zero on that edge). Levels are
    accumulated, so depth ``n`` is contained in depth ``n + 1``.
    """
    step = F.evaluate if hasattr(F, "evaluate") else F
    (x0, y0), (x1, y1) = box
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    xs = np.linspace(x0, x1, int(nx))
    ys = np.linspace(y0, y1, int(ny))
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    level = np.full((len(xs), len(ys)), -1, dtype=int)
    flagged = np.zeros((len(xs), len(ys)), dtype=bool)
    alive = np.ones(len(X), dtype=bool)
    pts = X.copy()
    for n in range(depth + 1):
        if n > 0:
            for i in np.nonzero(alive)[0]:
                try:
                    y = np.asarray(step(pts[i]), dtype=float)
                    if not np.all(np.isfinite(y)):
                        raise FloatingPointError
                    pts[i] = y
                except (PSVFError, FloatingPointError, ValueError, OverflowError):
                    alive[i] = False
            flagged |= ~alive.reshape(flagged.shape)
        marked = np.zeros(flagged.shape, dtype=bool)
        for h in surfaces:
            H = np.full(len(X), np.nan)
            for i in np.nonzero(alive)[0]:
                H[i] = h(pts[i])
            H = H.reshape(flagged.shape)
            marked |= np.abs(H) <= tol
            A = np.abs(H)
            for axis in (0, 1):
                a = [slice(None)] * 2
                b = [slice(None)] * 2
                a[axis], b[axis] = slice(None, -1), slice(1, None)
                a, b = tuple(a), tuple(b)
                change = (H[a] * H[b]) < 0
                marked[a] |= change & (A[a] <= A[b])
                marked[b] |= change & (A[b] < A[a])
        new = marked & (level < 0)
        level[new] = n
    return LambdaSet(xs, ys, level, flagged, depth)
