"""Disks, adapted charts, local and global invariant manifolds of section-map
saddles, transversal intersections and inclination traces (planar sections)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .errors import (ChartError, ConvergenceError, JacobianUndefinedError, NotTransversalError, PSVFError,
                     ShrinkRadiusError)
from .maps import SectionMap
from .poincare import SaddleData

__all__ = [
    "Disk",
    "LinearChart",
    "StraightenedChart",
    "ManifoldGraph",
    "ManifoldAtlas",
    "Intersection",
    "TraceRecord",
    "InclinationTrace",
    "adapted_coordinates",
    "straightened_chart",
    "local_manifold",
    "start_atlas",
    "continue_manifold",
    "find_transversal_intersection",
    "segment_disk",
    "advance_node",
    "inclination_trace",
    "stable_orbit",
    "sigma_clearance",
]


def sigma_clearance(surfaces, x) -> float:
    """Distance estimate ``min |h_i(x)| / |grad h_i(x)|`` (inf without surfaces)."""
    best = math.inf
    for h in surfaces:
        g = float(np.linalg.norm(h.gradient(x)))
        best = min(best, abs(h(x)) / g if g > 0 else 0.0)
    return best


# -- disks -----------------------------------------------------------------

@dataclass
class Disk:
    """Meshed embedded disk; for ``u = 1`` a parameterized curve.

    ``params`` are the generating parameters (seed or graph coordinate),
    ``derivs`` the parameter derivatives ``dx/ds`` when known, ``frames`` the
    unit tangent frames ``(m, u, n)``.
    """

    nodes: np.ndarray
    params: np.ndarray
    frames: np.ndarray
    provenance: str = "seed"
    depth: int = 0
    derivs: np.ndarray | None = None
    crossed: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim == 2:
            self.frames = self.frames[:, None, :]
        m = self.nodes.shape[0]
        if self.params.shape != (m,) or self.frames.shape[0] != m:
            raise ValueError("nodes, params and frames disagree in length")
        if self.crossed is None:
            self.crossed = np.zeros(m, dtype=bool)

    @property
    def u(self) -> int:
        return self.frames.shape[1]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def tangents(self) -> np.ndarray:
        return self.frames[:, 0, :]

    def arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def length(self) -> float:
        return float(self.arclength()[-1])

    def check(self, tol: float = 1e-14) -> None:
        """Raise if consecutive nodes collide or frames are degenerate."""
        seg = np.linalg.norm(np.diff(self.nodes, axis=0), axis=1)
        if seg.size and seg.min() <= tol:
            raise ValueError("disk mesh has colliding nodes")
        for F in self.frames:
            if np.linalg.matrix_rank(F, tol=1e-10) < self.u:
                raise ValueError("degenerate tangent frame")

    def spline(self) -> CubicHermiteSpline:
        if self.derivs is not None:
            d = self.derivs
        else:
            ds = np.gradient(self.params)
            chord = np.gradient(self.nodes, axis=0)
            speed = np.linalg.norm(chord, axis=1) / np.where(ds == 0, 1, np.abs(ds))
            d = self.tangents * speed[:, None] * np.sign(ds)[:, None]
        return CubicHermiteSpline(self.params, self.nodes, d, axis=0)

    def point(self, s):
        return self.spline()(s)

    def subdisk(self, lo: float, hi: float) -> "Disk":
        keep = (self.params >= lo) & (self.params <= hi)
        return Disk(self.nodes[keep], self.params[keep], self.frames[keep], self.provenance, self.depth,
                    None if self.derivs is None else self.derivs[keep], self.crossed[keep], dict(self.meta))

    def reversed(self) -> "Disk":
        return Disk(self.nodes[::-1], self.params[::-1], self.frames[::-1], self.provenance, self.depth,
                    None if self.derivs is None else self.derivs[::-1], self.crossed[::-1], dict(self.meta))

    def sigma_segments(self, surfaces) -> np.ndarray:
        """Indices ``i`` where segment ``(i, i+1)`` meets the switching set."""
        if not surfaces:
            return np.zeros(0, dtype=int)
        out = set()
        for h in surfaces:
            vals = np.array([h(x) for x in self.nodes])
            out.update(np.nonzero(vals[:-1] * vals[1:] <= 0)[0].tolist())
        return np.array(sorted(out), dtype=int)


def _orient(frames: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Flip 1-D tangents to agree with the node ordering."""
    t = frames.copy()
    if len(nodes) < 2:
        return t
    chord = np.gradient(nodes, axis=0)
    s = np.sign(np.einsum("ij,ij->i", t, chord))
    s[s == 0] = 1
    return t * s[:, None]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1, n)


def segment_disk(center, direction, radius: float, n_nodes: int = 101, provenance: str = "segment") -> Disk:
    """Straight 1-disk ``center + s * direction``, ``|s| <= radius``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    s = np.linspace(-radius, radius, n_nodes)
    nodes = np.asarray(center, dtype=float) + s[:, None] * d
    return Disk(nodes, s, np.repeat(d[None, None, :], n_nodes, axis=0), provenance,
                derivs=np.repeat(d[None, :], n_nodes, axis=0))


# -- charts ----------------------------------------------------------------

class LinearChart:
    """Affine chart ``xi = E^{-1}(x - p)`` with ``E = [stable | unstable]``."""

    def __init__(self, point, E, s: int):
        self.point = np.asarray(point, dtype=float)
        self.E = np.asarray(E, dtype=float)
        self.Einv = np.linalg.inv(self.E)
        self.s = s
        self.u = self.E.shape[0] - s
        self.condition = float(np.linalg.cond(self.E))

    def forward(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.point) @ self.Einv.T

    def inverse(self, xi) -> np.ndarray:
        return self.point + np.asarray(xi, dtype=float) @ self.E.T

    def jacobian(self, x=None) -> np.ndarray:
        return self.Einv.copy()

    def push(self, x, v) -> np.ndarray:
        """Chart components of a tangent vector (or frame columns) at ``x``."""
        return self.jacobian(x) @ np.asarray(v, dtype=float)

    def split(self, x, v) -> tuple[np.ndarray, np.ndarray]:
        w = self.push(x, v)
        return w[: self.s], w[self.s:]


def adapted_coordinates(saddle: SaddleData, cond_max: float = 1e8) -> LinearChart:
    """Chart sending ``p`` to 0 and the stable/unstable eigenspaces to the axes."""
    if not saddle.is_saddle:
        raise ChartError("adapted coordinates need a saddle (s >= 1, u >= 1)")
    E = np.hstack([saddle.stable_vectors, saddle.unstable_vectors])
    if E.shape[0] != E.shape[1]:
        raise ChartError("eigenbasis is not complete", shape=E.shape)
    cond = float(np.linalg.cond(E))
    if not cond <= cond_max:
        raise ChartError(f"eigenbasis condition number {cond:.3e} exceeds {cond_max:g}", condition=cond)
    return LinearChart(saddle.point, E, saddle.s)


class ManifoldGraph:
    """Chebyshev graph ``other = g(coord)`` of a 1-D local manifold in a linear chart."""

    def __init__(self, series: Chebyshev, lo: float, hi: float):
        self.series = series
        self.dseries = series.deriv()
        self.lo, self.hi = float(lo), float(hi)

    def __call__(self, t):
        return self.series(t)

    def deriv(self, t):
        return self.dseries(t)


class StraightenedChart:
    """Nonlinear planar chart in which both local manifolds are coordinate axes.

    With ``xi = (xi_s, xi_u)`` the linear chart, ``W^u: xi_s = g_u(xi_u)`` and
    ``W^s: xi_u = g_s(xi_s)``; the chart is ``y_s = xi_s - g_u(xi_u)``,
    ``y_u = xi_u - g_s(xi_s)``.
    """

    def __init__(self, linear: LinearChart, g_u: ManifoldGraph, g_s: ManifoldGraph):
        if linear.s != 1 or linear.u != 1:
            raise ChartError("straightened charts are planar (s = u = 1)")
        self.linear = linear
        self.g_u, self.g_s = g_u, g_s
        self.point = linear.point
        self.s, self.u = 1, 1

    def _check(self, xi):
        xs, xu = xi[..., 0], xi[..., 1]
        if (np.any(xu < self.g_u.lo - 1e-12) or np.any(xu > self.g_u.hi + 1e-12)
                or np.any(xs < self.g_s.lo - 1e-12) or np.any(xs > self.g_s.hi + 1e-12)):
            raise ChartError("point outside the straightened chart", xi=np.asarray(xi))

    def in_domain(self, x) -> bool:
        xi = self.linear.forward(x)
        return bool(self.g_u.lo <= xi[1] <= self.g_u.hi and self.g_s.lo <= xi[0] <= self.g_s.hi)

    def forward(self, x) -> np.ndarray:
        xi = self.linear.forward(x)
        self._check(xi)
        return np.stack([xi[..., 0] - self.g_u(xi[..., 1]), xi[..., 1] - self.g_s(xi[..., 0])], axis=-1)

    def inverse(self, y, tol: float = 1e-15, max_iter: int = 50) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        xi = y.copy()
        for _ in range(max_iter):
            F = np.array([xi[0] - self.g_u(xi[1]) - y[0], xi[1] - self.g_s(xi[0]) - y[1]])
            if np.max(np.abs(F)) <= tol * (1 + np.max(np.abs(y))):
                break
            J = np.array([[1.0, -self.g_u.deriv(xi[1])], [-self.g_s.deriv(xi[0]), 1.0]])
            xi = xi - np.linalg.solve(J, F)
        else:
            raise ChartError("chart inverse did not converge", y=y)
        return self.linear.inverse(xi)

    def jacobian(self, x) -> np.ndarray:
        xi = self.linear.forward(x)
        self._check(xi)
        D = np.array([[1.0, -self.g_u.deriv(xi[1])], [-self.g_s.deriv(xi[0]), 1.0]])
        return D @ self.linear.Einv

    def push(self, x, v) -> np.ndarray:
        return self.jacobian(x) @ np.asarray(v, dtype=float)

    def split(self, x, v):
        w = self.push(x, v)
        return w[:1], w[1:]


# -- local manifolds -------------------------------------------------------

def _branch_data(saddle: SaddleData, branch: str):
    if saddle.s != 1 or saddle.u != 1:
        raise ChartError("local manifolds are implemented for planar saddles (s = u = 1)")
    if branch == "unstable":
        alpha = float(np.real(saddle.unstable_values[0]))
        return alpha, 1, 1  # multiplier, map direction, graph coordinate index in xi
    if branch == "stable":
        alpha = 1.0 / float(np.real(saddle.stable_values[0]))
        return alpha, -1, 0
    raise ValueError("branch must be 'stable' or 'unstable'")


def _graph_points(lin: LinearChart, coord: int, t, g):
    xi = np.zeros((np.size(t), 2))
    xi[:, coord] = t
    xi[:, 1 - coord] = g
    return lin.inverse(xi)


def _clean_radius(surfaces, points, params, clearance, ref_sign):
    """Largest |param| before the first point that is too close to or across Σ."""
    bad = None
    order = np.argsort(np.abs(params))
    for k in order:
        x = points[k]
        for h, s0 in zip(surfaces, ref_sign):
            g = np.linalg.norm(h.gradient(x))
            v = h(x)
            if np.sign(v) != s0 or abs(v) / g < clearance:
                bad = abs(params[k])
                break
        if bad is not None:
            break
    return bad


def local_manifold(pmap: SectionMap, saddle: SaddleData, branch: str, radius: float, side: int = 0,
                   n_nodes: int = 81, degree: int = 24, tol: float = 1e-8, max_iter: int = 60,
                   clearance: float = 1e-4) -> Disk:
    """Local stable/unstable manifold as a graph over its eigendirection.

    A graph transform: nodes of the current graph at ``xi / alpha`` are mapped
    by ``P`` (``P^-1`` for the stable branch) and refitted until the graph
    changes by less than ``tol``. ``side`` selects ``+1``, ``-1`` or both (0).
    """
    lin = adapted_coordinates(saddle)
    alpha, direction, coord = _branch_data(saddle, branch)
    power = 1 if alpha > 0 else 2
    a_eff = abs(alpha) ** power
    lo, hi = {0: (-radius, radius), 1: (0.0, radius), -1: (-radius, 0.0)}[side]
    surfaces = tuple(getattr(pmap, "surfaces", ()))
    ref = [np.sign(h(saddle.point)) for h in surfaces]
    # the seed segment along the eigenvector must avoid the switching set
    grid = np.linspace(lo, hi, max(4 * n_nodes, 401))
    if surfaces:
        seed_pts = _graph_points(lin, coord, grid, np.zeros_like(grid))
        bad = _clean_radius(surfaces, seed_pts, grid, clearance, ref)
        if bad is not None:
            raise ShrinkRadiusError(f"seed segment meets the switching set within radius {radius:g}",
                                    max_radius=0.9 * bad)
    m = 4 * degree
    pre = np.polynomial.chebyshev.chebpts2(m)
    pre = 0.5 * (lo + hi) + 0.5 * (hi - lo) * pre
    pre = pre * 1.15 / a_eff
    check = np.linspace(lo, hi, 201)
    g = Chebyshev([0.0], domain=[lo * 1.15, hi * 1.15] if lo != hi else [-1, 1])
    change = math.inf
    for it in range(max_iter):
        pts = _graph_points(lin, coord, pre, g(pre))
        imgs = np.array([pmap.iterate(x, direction * power) for x in pts])
        xi = lin.forward(imgs)
        t, other = xi[:, coord], xi[:, 1 - coord]
        dom = [min(t.min(), lo), max(t.max(), hi)]
        g_new = Chebyshev.fit(t, other, degree, domain=dom)
        change = float(np.max(np.abs(g_new(check) - g(check))))
        g = g_new
        if change < tol:
            break
    else:
        raise ConvergenceError(f"graph transform did not converge (change {change:.2e})", change=change)
    params = np.linspace(lo, hi, n_nodes)
    nodes = _graph_points(lin, coord, params, g(params))
    dxi = np.zeros((n_nodes, 2))
    dxi[:, coord] = 1.0
    dxi[:, 1 - coord] = g.deriv()(params)
    derivs = dxi @ lin.E.T
    if surfaces:
        bad = _clean_radius(surfaces, nodes, params, clearance, ref)
        if bad is not None:
            raise ShrinkRadiusError(f"local {branch} manifold meets the switching set within {radius:g}",
                                    max_radius=0.9 * bad)
    disk = Disk(nodes, params, _unit(derivs), provenance=f"local-{branch}", depth=0, derivs=derivs,
                meta={"branch": branch, "side": side, "radius": radius, "iterations": it + 1,
                      "change": change, "alpha": alpha if branch == "unstable" else 1.0 / alpha})
    disk.meta["graph"] = ManifoldGraph(g, lo, hi)
    disk.meta["chart"] = lin
    return disk


def straightened_chart(pmap: SectionMap, saddle: SaddleData, radius: float, **kw) -> StraightenedChart:
    """Chart built from two-sided local manifolds of the given radius."""
    wu = local_manifold(pmap, saddle, "unstable", radius, side=0, **kw)
    ws = local_manifold(pmap, saddle, "stable", radius, side=0, **kw)
    return StraightenedChart(wu.meta["chart"], wu.meta["graph"], ws.meta["graph"])


# -- global manifolds ------------------------------------------------------

def advance_node(pmap: SectionMap, x, d, direction: int):
    """One iterate of a node and its tangent; returns ``(x', d', crossed)``."""
    if hasattr(pmap, "trajectory"):
        traj = pmap.trajectory(x, direction)
        from .variational import jacobian
        J = jacobian(pmap.ext.system, traj, M0=np.asarray(d, dtype=float)[:, None], controls=pmap.controls)
        return traj.x_end, J[:, 0], traj.n_events > 0
    y, J = pmap.step_with_jacobian(x, direction)
    crossed = False
    for h in getattr(pmap, "surfaces", ()):
        if h(x) * h(y) < 0:
            crossed = True
    return y, J @ np.asarray(d, dtype=float), crossed


@dataclass
class ManifoldAtlas:
    """Local disk plus its successive images (unstable) or preimages (stable)."""

    saddle: SaddleData
    branch: str
    side: int
    pmap: SectionMap
    local: Disk
    seed_lo: float
    seed_hi: float
    disks: list[Disk] = field(default_factory=list)
    truncated: bool = False
    truncation: dict | None = None

    @property
    def direction(self) -> int:
        return 1 if self.branch == "unstable" else -1

    def seed(self, s):
        """Point and ``d/ds`` on the local graph at parameter ``s``."""
        lin: LinearChart = self.local.meta["chart"]
        g: ManifoldGraph = self.local.meta["graph"]
        coord = 1 if self.branch == "unstable" else 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = _graph_points(lin, coord, s, g(s))
        dxi = np.zeros((s.size, 2))
        dxi[:, coord] = 1.0
        dxi[:, 1 - coord] = g.deriv(s)
        return x, dxi @ lin.E.T

    def evaluate(self, depth: int, s: float):
        """``(x, dx/ds, crossed)`` of the node at seed parameter ``s`` after ``depth`` steps."""
        x, d = self.seed(s)
        x, d = x[0], d[0]
        crossed = False
        for _ in range(depth):
            x, d, c = advance_node(self.pmap, x, d, self.direction)
            crossed = crossed or c
        return x, d, crossed

    def curves(self) -> list[Disk]:
        """Local piece on the atlas side followed by the continuation disks."""
        loc = self.local
        if self.side > 0:
            loc = loc.subdisk(0.0, math.inf)
        elif self.side < 0:
            loc = loc.subdisk(-math.inf, 0.0).reversed()
        return [loc] + list(self.disks)

    def polyline(self) -> np.ndarray:
        parts = [c.nodes for c in self.curves()]
        return np.vstack(parts)

    def write_csv(self, path, surfaces=()) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.local.dim
            w.writerow(["disk", "node", "param"] + [f"x{j}" for j in range(dim)] +
                       ["crossed", "sigma_segment"])
            for k, disk in enumerate(self.curves()):
                seg = set(disk.sigma_segments(surfaces).tolist())
                for i in range(len(disk)):
                    w.writerow([k, i, f"{disk.params[i]:.16e}"] + [f"{v:.16e}" for v in disk.nodes[i]]
                               + [int(disk.crossed[i]), int(i in seg)])


def start_atlas(pmap: SectionMap, saddle: SaddleData, branch: str, radius: float, side: int,
                **local_kw) -> ManifoldAtlas:
    """Local manifold on one side plus its fundamental segment ``[s_a, radius]``."""
    if side not in (1, -1):
        raise ValueError("continuation works one side at a time (side = +1 or -1)")
    alpha, _, _ = _branch_data(saddle, branch)
    if alpha < 0:
        raise ChartError("continuation needs a positive multiplier on the branch", multiplier=alpha)
    local = local_manifold(pmap, saddle, branch, radius, side=side, **local_kw)
    atlas = ManifoldAtlas(saddle, branch, side, pmap, local, 0.0, 0.0)
    end = side * radius
    coord = 1 if branch == "unstable" else 0
    lin: LinearChart = local.meta["chart"]

    def landing(s):
        x, d, _ = atlas.evaluate(1, s)
        return lin.forward(x)[coord] - end

    guess = end / alpha
    lo, hi = sorted((0.7 * guess, 1.3 * guess))
    s_a = brentq(landing, lo, hi, xtol=1e-15, rtol=1e-14)
    atlas.seed_lo, atlas.seed_hi = sorted((s_a, end))
    return atlas


def _node_iter(atlas: ManifoldAtlas, depth: int, s_values, cache: dict):
    out = []
    for s in s_values:
        key = float(s)
        if key in cache:
            out.append(cache[key])
            continue
        out.append(atlas.evaluate(depth, key))
        cache[key] = out[-1]
    return out


def continue_manifold(atlas: ManifoldAtlas, steps: int, h_max: float = 0.02, angle_max: float = 0.05,
                      h_min: float = 0.0, node_cap: int = 4000, initial_nodes: int = 41) -> ManifoldAtlas:
    """Append ``steps`` images (preimages for the stable branch) of the fundamental segment.

    Nodes are ``P^k(seed(s))`` with ``s`` in the fundamental segment; the mesh
    is refined in ``s`` until chords are below ``h_max`` and the turning angle
    below ``angle_max`` (or the node cap is hit). A node whose orbit fails
    truncates the branch there.
    """
    if atlas.truncated:
        return atlas
    if atlas.disks:
        prev = atlas.disks[-1]
        s_list = list(prev.params)
        base = {float(s): (x, d, c) for s, x, d, c in zip(prev.params, prev.nodes, prev.derivs, prev.crossed)}
        depth0 = prev.depth
    else:
        s_list = list(np.geomspace(atlas.seed_lo, atlas.seed_hi, initial_nodes)) if atlas.seed_lo > 0 else \
            list(-np.geomspace(-atlas.seed_hi, -atlas.seed_lo, initial_nodes)[::-1])
        x, d = atlas.seed(s_list)
        base = {float(s): (x[i], d[i], False) for i, s in enumerate(s_list)}
        depth0 = 0
    surfaces = tuple(getattr(atlas.pmap, "surfaces", ()))
    for step in range(steps):
        depth = depth0 + step + 1
        cache: dict = {}
        failed_at = None
        for s in s_list:
            x, d, c = base[float(s)]
            try:
                y, e, c2 = advance_node(atlas.pmap, x, d, atlas.direction)
            except JacobianUndefinedError:
                continue  # image on the switching set: a valid point without a tangent
            except PSVFError as exc:
                failed_at = (float(s), exc)
                break
            cache[float(s)] = (y, e, c or c2)
        if failed_at is not None:
            s_list = [s for s in s_list if (s - failed_at[0]) * (1 if atlas.seed_lo >= 0 else -1) < 0]
            s_list = sorted(s for s in s_list if float(s) in cache)
            atlas.truncated = True
            atlas.truncation = {"depth": depth, "param": failed_at[0], "error": failed_at[1].kind,
                                "message": str(failed_at[1])}
        s_list = sorted(cache.keys()) if failed_at is None else s_list
        # refine
        while len(s_list) < node_cap:
            pts = np.array([cache[s][0] for s in s_list])
            if len(pts) < 2:
                break
            tang = _unit(np.array([cache[s][1] for s in s_list]))
            chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            turn = np.arccos(np.clip(np.einsum("ij,ij->i", tang[:-1], tang[1:]), -1.0, 1.0))
            straddle = _straddles(surfaces, pts)
            need = np.nonzero((chord > h_max) | ((turn > angle_max) & ~straddle))[0]
            new = []
            for i in need:
                a, b = s_list[i], s_list[i + 1]
                if abs(b - a) <= 1e-13 * max(abs(a), abs(b)):
                    continue
                new.append(0.5 * (a + b))
            if not new:
                break
            new = new[: node_cap - len(s_list)]
            stop = False
            skipped = set()
            for s in new:
                try:
                    cache[float(s)] = atlas.evaluate(depth, s)
                except JacobianUndefinedError:
                    skipped.add(float(s))
                except PSVFError as exc:
                    atlas.truncated = True
                    atlas.truncation = {"depth": depth, "param": float(s), "error": exc.kind,
                                        "message": str(exc)}
                    s_list = [v for v in s_list if (v - s) * np.sign(atlas.seed_hi) < 0]
                    stop = True
                    break
            if stop:
                break
            added = {float(s) for s in new} - skipped
            if not added:
                break
            s_list = sorted(set(s_list) | added)
        if h_min > 0 and len(s_list) > 3:
            s_list = _coarsen(s_list, cache, h_min, angle_max)
        order = sorted(s_list)
        nodes = np.array([cache[s][0] for s in order])
        derivs = np.array([cache[s][1] for s in order])
        crossed = np.array([cache[s][2] for s in order], dtype=bool)
        params = np.array(order)
        if atlas.side < 0:
            nodes, derivs, crossed, params = nodes[::-1], derivs[::-1], crossed[::-1], params[::-1]
        if len(nodes) >= 2:
            disk = Disk(nodes, params, _unit(derivs), provenance=f"image-{depth}", depth=depth,
                        derivs=derivs, crossed=crossed, meta={"capped": len(s_list) >= node_cap})
            atlas.disks.append(disk)
        if atlas.truncated:
            break
        base = cache
    return atlas


def _straddles(surfaces, pts) -> np.ndarray:
    out = np.zeros(max(len(pts) - 1, 0), dtype=bool)
    for h in surfaces:
        v = np.array([h(x) for x in pts])
        out |= v[:-1] * v[1:] <= 0
    return out


def _coarsen(s_list, cache, h_min, angle_max):
    keep = [s_list[0]]
    for i in range(1, len(s_list) - 1):
        x_prev = cache[keep[-1]][0]
        x = cache[s_list[i]][0]
        if np.linalg.norm(x - x_prev) >= h_min:
            keep.append(s_list[i])
            continue
        t0 = _unit(cache[keep[-1]][1])
        t1 = _unit(cache[s_list[i + 1]][1])
        if math.acos(min(1.0, abs(float(np.dot(t0, t1))))) > angle_max:
            keep.append(s_list[i])
    keep.append(s_list[-1])
    return keep


# -- intersections ---------------------------------------------------------

@dataclass
class Intersection:
    point: np.ndarray
    angle: float
    clearance: float
    transversal: bool
    param_a: tuple[int, float]
    param_b: tuple[int, float]
    tangent_a: np.ndarray
    tangent_b: np.ndarray

    def to_dict(self) -> dict:
        return {"q": self.point.tolist(), "angle": self.angle, "clearance": self.clearance,
                "transversal": self.transversal, "param_u": list(self.param_a),
                "param_s": list(self.param_b)}


class _CurveSource:
    """Uniform access to an atlas (exact re-evaluation) or a plain disk list."""

    def __init__(self, obj):
        if isinstance(obj, ManifoldAtlas):
            self.atlas = obj
            self.curves = obj.curves()
        else:
            self.atlas = None
            self.curves = list(obj) if isinstance(obj, (list, tuple)) else [obj]

    def segments(self):
        A, B, meta = [], [], []
        for k, c in enumerate(self.curves):
            if len(c) < 2:
                continue
            A.append(c.nodes[:-1])
            B.append(c.nodes[1:])
            meta.extend((k, c.params[i], c.params[i + 1]) for i in range(len(c) - 1))
        if not A:
            return np.zeros((0, 2)), np.zeros((0, 2)), []
        return np.vstack(A), np.vstack(B), meta

    def evaluate(self, k: int, s: float):
        c = self.curves[k]
        if self.atlas is not None:
            if k == 0:
                x, d = self.atlas.seed(s)
                return x[0], d[0]
            x, d, _ = self.atlas.evaluate(c.depth, s)
            return x, d
        spl = c.spline()
        return spl(s), spl.derivative()(s)

    def position(self, k: int, s: float):
        c = self.curves[k]
        if self.atlas is not None:
            if k == 0:
                return self.atlas.seed(s)[0][0]
            x = self.atlas.seed(s)[0][0]
            return self.atlas.pmap.iterate(x, self.atlas.direction * c.depth)
        return c.spline()(s)


def _seg_hits(a0, a1, B0, B1):
    """Parameters ``(t, u)`` of proper crossings of segment a with segments B."""
    r = a1 - a0
    S = B1 - B0
    denom = r[0] * S[:, 1] - r[1] * S[:, 0]
    qp = B0 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * S[:, 1] - qp[:, 1] * S[:, 0]) / denom
        u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / denom
    ok = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    return np.nonzero(ok)[0], t, u


def _angle(t1, t2) -> float:
    c = abs(float(np.dot(t1, t2))) / (np.linalg.norm(t1) * np.linalg.norm(t2))
    return math.acos(min(1.0, c))


def find_transversal_intersection(Wu, Ws, clearance: float = 1e-4, angle_threshold: float = 1e-3,
                                  surfaces: Sequence = (), tol: float = 1e-11, max_rounds: int = 80,
                                  dedup: float = 1e-7, return_rejected: bool = False,
                                  saddle_exclusion: float = 1e-6):
    """Crossings of two 1-D atlases refined on the true parameterizations.

    Returns intersections with clearance from the switching set at least
    ``clearance`` and crossing angle at least ``angle_threshold``; with
    ``return_rejected`` also those that failed either filter. Points within
    ``saddle_exclusion`` of an atlas' saddle are the common base point of the
    two branches, not homoclinic points, and are dropped.
    """
    A = _CurveSource(Wu)
    B = _CurveSource(Ws)
    bases = [src.atlas.saddle.point for src in (A, B) if src.atlas is not None]
    if not surfaces:
        for src in (A, B):
            if src.atlas is not None:
                surfaces = tuple(getattr(src.atlas.pmap, "surfaces", ()))
                break
    a0, a1, ma = A.segments()
    b0, b1, mb = B.segments()
    if len(a0) == 0 or len(b0) == 0:
        return ([], []) if return_rejected else []
    bmin = np.minimum(b0, b1)
    bmax = np.maximum(b0, b1)
    accepted: list[Intersection] = []
    rejected: list[Intersection] = []
    seen: list[np.ndarray] = []
    for i in range(len(a0)):
        lo = np.minimum(a0[i], a1[i])
        hi = np.maximum(a0[i], a1[i])
        box = np.nonzero(np.all(bmax >= lo, axis=1) & np.all(bmin <= hi, axis=1))[0]
        if box.size == 0:
            continue
        idx, t, u = _seg_hits(a0[i], a1[i], b0[box], b1[box])
        for j in idx:
            jb = box[j]
            ka, sa0, sa1 = ma[i]
            kb, sb0, sb1 = mb[jb]
            sa = sa0 + t[j] * (sa1 - sa0)
            sb = sb0 + u[j] * (sb1 - sb0)
            xa, da = A.evaluate(ka, sa)
            xb, db = B.evaluate(kb, sb)
            if _angle(da, db) < 0.5 * angle_threshold:
                # near-tangent: report unrefined, Newton would be ill-conditioned
                q = 0.5 * (xa + xb)
                if not any(np.linalg.norm(q - p) < saddle_exclusion for p in bases) and \
                        not any(np.linalg.norm(q - z) < dedup for z in seen):
                    seen.append(q)
                    rejected.append(Intersection(q, _angle(da, db), sigma_clearance(surfaces, q), False,
                                                 (ka, float(sa)), (kb, float(sb)), _unit(da), _unit(db)))
                continue
            hit = _refine(A, B, ka, kb, (sa0, sa1), (sb0, sb1), tol, max_rounds)
            if hit is None:
                continue
            q, sa, sb, da, db = hit
            if any(np.linalg.norm(q - p) < saddle_exclusion for p in bases):
                continue
            if any(np.linalg.norm(q - z) < dedup for z in seen):
                continue
            seen.append(q)
            ang = _angle(da, db)
            clr = sigma_clearance(surfaces, q)
            rec = Intersection(q, ang, clr, ang >= angle_threshold, (ka, float(sa)), (kb, float(sb)),
                               _unit(da), _unit(db))
            if ang >= angle_threshold and clr >= clearance:
                accepted.append(rec)
            else:
                rejected.append(rec)
    return (accepted, rejected) if return_rejected else accepted


def _refine(A, B, ka, kb, ia, ib, tol, max_rounds, switch: float = 1e-5):
    """Bisect both parameter intervals, keeping the crossing sub-segment pair,
    then finish with Newton on ``A(s) = B(sigma)``."""
    (sa0, sa1), (sb0, sb1) = ia, ib
    pa0 = A.position(ka, sa0)
    pa1 = A.position(ka, sa1)
    pb0 = B.position(kb, sb0)
    pb1 = B.position(kb, sb1)
    idx, t, u = _seg_hits(pa0, pa1, pb0[None, :], pb1[None, :])
    if idx.size == 0:
        return None
    for _ in range(max_rounds):
        if max(np.linalg.norm(pa1 - pa0), np.linalg.norm(pb1 - pb0)) < switch:
            break
        ma_ = 0.5 * (sa0 + sa1)
        mb_ = 0.5 * (sb0 + sb1)
        pam = A.position(ka, ma_)
        pbm = B.position(kb, mb_)
        found = None
        for (x0, x1, s0, s1) in ((pa0, pam, sa0, ma_), (pam, pa1, ma_, sa1)):
            for (y0, y1, r0, r1) in ((pb0, pbm, sb0, mb_), (pbm, pb1, mb_, sb1)):
                idx, t, u = _seg_hits(x0, x1, y0[None, :], y1[None, :])
                if idx.size:
                    found = (x0, x1, s0, s1, y0, y1, r0, r1)
                    break
            if found:
                break
        if found is None:
            break
        pa0, pa1, sa0, sa1, pb0, pb1, sb0, sb1 = found
    idx, t, u = _seg_hits(pa0, pa1, pb0[None, :], pb1[None, :])
    if idx.size == 0:
        return None
    sa = sa0 + t[0] * (sa1 - sa0)
    sb = sb0 + u[0] * (sb1 - sb0)
    xa, da = A.evaluate(ka, sa)
    xb, db = B.evaluate(kb, sb)
    for _ in range(8):
        F = xa - xb
        if np.linalg.norm(F) <= tol:
            break
        J = np.column_stack([da, -db])
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        sa_new, sb_new = sa + step[0], sb + step[1]
        # stay inside the bracketing intervals (with a little slack)
        wa, wb = abs(sa1 - sa0), abs(sb1 - sb0)
        if not (min(sa0, sa1) - wa <= sa_new <= max(sa0, sa1) + wa
                and min(sb0, sb1) - wb <= sb_new <= max(sb0, sb1) + wb):
            break
        sa, sb = sa_new, sb_new
        xa, da = A.evaluate(ka, sa)
        xb, db = B.evaluate(kb, sb)
    return 0.5 * (xa + xb), sa, sb, da, db


# -- inclination traces ----------------------------------------------------

@dataclass
class TraceRecord:
    n: int
    point: np.ndarray
    chart_point: np.ndarray
    v_s: float
    v_u: float
    inclination: float
    stretch: float | None
    in_V: bool
    in_V1: bool


@dataclass
class InclinationTrace:
    records: list[TraceRecord]
    direction: int = 1
    label: str = ""

    @property
    def inclinations(self) -> np.ndarray:
        return np.array([r.inclination for r in self.records])

    @property
    def stretches(self) -> np.ndarray:
        return np.array([np.nan if r.stretch is None else r.stretch for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> list[dict]:
        return [{"n": r.n, "x": r.point.tolist(), "y": r.chart_point.tolist(), "v_s": r.v_s, "v_u": r.v_u,
                 "inclination": r.inclination, "stretch": r.stretch, "in_V": r.in_V, "in_V1": r.in_V1}
                for r in self.records]


def _box_test(box, y) -> bool:
    if box is None:
        return True
    lo, hi = box
    return bool(np.all(y >= np.asarray(lo) - 1e-15) and np.all(y <= np.asarray(hi) + 1e-15))


def inclination_trace(pmap: SectionMap, chart, x0, v0, iterates: int, orbit=None,
                      box_V=None, box_V1=None, direction: int = 1, degeneracy: float = 1e-14,
                      label: str = "") -> InclinationTrace:
    """Track ``v_n = DP(q_{n-1}) v_{n-1}`` and its inclination in ``chart``.

    ``orbit`` optionally supplies the base points ``q_0..q_N`` (for instance a
    stable-manifold orbit generated backward); otherwise they are iterated.
    Boxes are ``(lo, hi)`` pairs in chart coordinates. Tangents are
    renormalized each step; stretch ratios are taken before renormalizing.
    """
    x = np.asarray(x0 if orbit is None else orbit[0], dtype=float)
    v = np.asarray(v0, dtype=float)
    v = v / np.linalg.norm(v)
    records: list[TraceRecord] = []

    def record(n, x, v):
        y = chart.forward(x)
        w = chart.push(x, v)
        ws, wu = float(np.linalg.norm(w[: chart.s])), float(np.linalg.norm(w[chart.s:]))
        if direction < 0:
            ws, wu = wu, ws
        if wu <= degeneracy * max(1.0, ws):
            raise NotTransversalError(f"unstable tangent component vanished at iterate {n}", n=n, x=x)
        records.append(TraceRecord(n, x.copy(), y, ws, wu, ws / wu, None,
                                   _box_test(box_V, y), _box_test(box_V1, y)))
        return wu

    wu_prev = record(0, x, v)
    for n in range(1, iterates + 1):
        y_next, J = pmap.step_with_jacobian(x, direction)
        if orbit is not None:
            if n >= len(orbit):
                break
            y_next = np.asarray(orbit[n], dtype=float)
        v = J @ v
        scale = np.linalg.norm(v)
        v = v / scale
        wu = record(n, y_next, v)
        records[-2].stretch = (wu * scale) / wu_prev
        wu_prev = wu
        x = y_next
    return InclinationTrace(records, direction, label)


def stable_orbit(pmap: SectionMap, ws_local: Disk, s0: float, n_iter: int,
                 resolve: float = 1e-9) -> list[np.ndarray]:
    """Orbit ``q_0..q_n`` of a point on the local stable manifold.

    Forward iteration drifts off ``W^s`` at the unstable rate, so the orbit is
    generated by backward iteration from a deep point on the local graph;
    beyond the resolvable depth (``|xi_s| < resolve``) points are taken on the
    graph at the linearly contracted parameter.
    """
    lin: LinearChart = ws_local.meta["chart"]
    g: ManifoldGraph = ws_local.meta["graph"]
    alpha_s = ws_local.meta.get("alpha")
    if alpha_s is None:
        raise ValueError("stable local disk lacks its multiplier (meta['alpha'])")
    n_res = 0
    while n_res < n_iter and abs(s0) * abs(alpha_s) ** (n_res + 1) >= resolve:
        n_res += 1
    s_deep = s0 * alpha_s ** n_res
    z = _graph_points(lin, 0, np.array([s_deep]), g(np.array([s_deep])))[0]
    back = [z]
    for _ in range(n_res):
        back.append(pmap.inverse(back[-1]))
    orbit = back[::-1]
    for k in range(n_res + 1, n_iter + 1):
        s = s_deep * alpha_s ** (k - n_res)
        orbit.append(_graph_points(lin, 0, np.array([s]), g(np.array([s])))[0])
    return orbit
