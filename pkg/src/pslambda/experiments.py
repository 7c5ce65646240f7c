"""End-to-end pipelines shared by the command line and the acceptance suite.

A homoclinic setup gathers everything the inclination experiments need at
one phase section: the saddle, a straightened chart, measured constants,
both atlases, a certified transversal homoclinic point and a short disk
``Delta`` through it along the normal to the stable manifold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import HypothesisViolation
from .lemma import Box, BoundReport, ProofConstants, measure_constants, verify_bounds
from .manifolds import (Disk, Intersection, ManifoldAtlas, continue_manifold, find_transversal_intersection,
                        inclination_trace, local_manifold, segment_disk, stable_orbit, start_atlas,
                        straightened_chart)
from .maps import SectionMap
from .poincare import SaddleData

__all__ = ["HomoclinicSetup", "homoclinic_setup", "window", "stable_traces", "parallel_map"]


@dataclass
class HomoclinicSetup:
    pmap: SectionMap
    saddle: SaddleData
    chart: object
    constants: ProofConstants
    unstable: ManifoldAtlas
    stable: ManifoldAtlas
    intersection: Intersection
    delta: Disk


def _score(hit: Intersection) -> float:
    return hit.angle * min(hit.clearance, 0.1)


def homoclinic_setup(pmap: SectionMap, saddle: SaddleData, box_V: Box, box_V1: Box, *,
                     chart_radius: float = 0.3, atlas_radius: float = 0.1, side: int = 1,
                     unstable_steps: int = 2, stable_steps: int = 3, samples: int = 11,
                     eta: float = 1e-2, clearance: float = 1e-4, angle_threshold: float = 1e-3,
                     q_guess=None, delta_radius: float = 1e-3, delta_nodes: int = 3, chart=None,
                     constants: ProofConstants | None = None) -> HomoclinicSetup:
    """Build atlases on one side of the saddle and pick a transversal homoclinic point.

    Without ``q_guess`` the point with the best angle-times-clearance score
    is chosen; otherwise the accepted point nearest to ``q_guess``.
    """
    if chart is None:
        chart = straightened_chart(pmap, saddle, chart_radius)
    if constants is None:
        constants = measure_constants(pmap, chart, saddle, box_V, box_V1, samples=samples, eta=eta)
    wu = start_atlas(pmap, saddle, "unstable", atlas_radius, side)
    continue_manifold(wu, unstable_steps)
    ws = start_atlas(pmap, saddle, "stable", atlas_radius, side)
    continue_manifold(ws, stable_steps)
    hits = find_transversal_intersection(wu, ws, clearance=clearance, angle_threshold=angle_threshold)
    if not hits:
        raise HypothesisViolation("no transversal homoclinic point off the switching set",
                                  unstable_depth=unstable_steps, stable_depth=stable_steps)
    if q_guess is None:
        hit = max(hits, key=_score)
    else:
        g = np.asarray(q_guess, dtype=float)
        hit = min(hits, key=lambda h: float(np.linalg.norm(h.point - g)))
    t = hit.tangent_b / np.linalg.norm(hit.tangent_b)
    delta = segment_disk(hit.point, np.array([-t[1], t[0]]), delta_radius, delta_nodes)
    return HomoclinicSetup(pmap, saddle, chart, constants, wu, ws, hit, delta)


def window(disk: Disk, axis: int, lo: float, hi: float) -> Disk:
    """Nodes of ``disk`` with ``lo < x[axis] < hi`` (a contiguous run is expected)."""
    keep = np.nonzero((disk.nodes[:, axis] > lo) & (disk.nodes[:, axis] < hi))[0]
    if keep.size < 2:
        raise ValueError(f"window ({lo}, {hi}) on axis {axis} keeps fewer than two nodes")
    if np.any(np.diff(keep) != 1):
        raise ValueError("window selects a non-contiguous run of nodes")
    return Disk(disk.nodes[keep], disk.params[keep], disk.frames[keep], disk.provenance, disk.depth,
                None if disk.derivs is None else disk.derivs[keep], disk.crossed[keep], dict(disk.meta))


def stable_traces(pmap: SectionMap, saddle: SaddleData, chart, constants: ProofConstants, count: int,
                  iterates: int, rng: np.random.Generator, radius: float | None = None,
                  s_range: tuple[float, float] | None = None, threads: int = 1) -> list[BoundReport]:
    """Verify the bound chain along ``count`` random stable-manifold orbits.

    Base points are drawn on the local stable graph with ``|s|`` in
    ``s_range`` (default: 10% to 95% of the stable half-width of ``V``), and
    tangents at uniformly random angles. All random draws happen before any
    work is spread over ``threads`` workers, so results do not depend on it.
    """
    half = float(constants.box_V.hi[0])
    lo, hi = s_range or (0.1 * half, 0.95 * half)
    ws = local_manifold(pmap, saddle, "stable", radius or 1.5 * half)
    draws = [(float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])), float(rng.uniform(0.0, np.pi)))
             for _ in range(count)]

    def one(i):
        s0, th = draws[i]
        orbit = stable_orbit(pmap, ws, s0, iterates)
        trace = inclination_trace(pmap, chart, None, np.array([np.cos(th), np.sin(th)]), iterates,
                                  orbit=orbit, label=f"trace-{i}")
        return verify_bounds(trace, constants, label=f"trace-{i} s0={s0:.6g} angle={th:.6g}")

    return parallel_map(one, range(count), threads)


def parallel_map(func, items, threads: int = 1) -> list:
    """Ordered ``map`` over a thread pool (plain loop for one thread)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
