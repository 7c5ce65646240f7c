"""Reference systems: the constant-field two-zone example, an inert split of a
smooth Duffing loop (tier A), and a genuinely discontinuous loop tuned by
shooting to carry a crossing homoclinic connection (tier B)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .flow import FlowControls
from .maps import LinearMap
from .poincare import ExtendedSystem
from .systems import (PiecewiseSystem, SmoothField, constant_field, coordinate_surface, duffing_field,
                      harmonic_field, polynomial_field)

__all__ = [
    "example1_system",
    "example1_flow",
    "tier_a_systems",
    "TierB",
    "tier_b",
    "tier_b_extended",
    "duffing_loop_crossing",
    "linear_saddle_map",
    "forcing_field",
]


def example1_system() -> PiecewiseSystem:
    """``X- = (1, 1)`` below ``y = 0``, ``X+ = (0, 1)`` above."""
    return PiecewiseSystem([constant_field([1.0, 1.0], "lower"), constant_field([0.0, 1.0], "upper")],
                           [coordinate_surface(1, 0.0, 2, label="y")], {"-": 0, "+": 1},
                           label="example-1")


def example1_flow(x: float, y: float, t: float) -> np.ndarray:
    """Closed-form global flow of :func:`example1_system` (all four branches)."""
    if y <= 0:
        return np.array([t + x, t + y]) if t <= -y else np.array([x - y, t + y])
    return np.array([x, t + y]) if t >= -y else np.array([t + x + y, t + y])


def duffing_loop_crossing(c: float) -> float:
    """``y > 0`` where the zero-energy Duffing loop meets ``x = c``."""
    if not 0 < c < math.sqrt(2):
        raise ValueError("c must lie in (0, sqrt 2)")
    return c * math.sqrt(1.0 - c * c / 2.0)


def tier_a_systems(c: float = 0.7) -> tuple[PiecewiseSystem, PiecewiseSystem]:
    """``(split, smooth)``: the same Duffing field with and without an inert surface."""
    left = duffing_field(label="duffing-left")
    right = duffing_field(label="duffing-right")
    split = PiecewiseSystem([left, right], [coordinate_surface(0, c, 2, label="x-c")],
                            {"-": 0, "+": 1}, label="tier-a")
    smooth = PiecewiseSystem([duffing_field()], [], {(): 0}, label="duffing")
    return split, smooth


def _right_field(beta: float, nu: float, m: float) -> SmoothField:
    """``x' = y, y' = x - beta x^3 + nu (x - m) y``."""
    return polynomial_field([[(1.0, (0, 1))],
                             [(1.0, (1, 0)), (-beta, (3, 0)), (nu, (1, 1)), (-nu * m, (0, 1))]],
                            label="right")


@dataclass(frozen=True)
class TierB:
    system: PiecewiseSystem
    c: float
    beta: float
    nu: float
    m: float
    y_cross: float
    residual: float
    excursion_time: float


@lru_cache(maxsize=8)
def tier_b(c: float = 0.7, beta: float = 1.5, nu: float = -0.5) -> TierB:
    """Discontinuous loop: Duffing for ``x < c``, a damped/anti-damped field
    for ``x > c`` with the offset ``m`` solved so the right arc reconnects the
    Duffing unstable branch to its stable branch.
    """
    controls = FlowControls(rtol=1e-13, atol=1e-15)
    yu = duffing_loop_crossing(c)
    def mismatch(m):
        return _excursion_from(c, beta, nu, m, yu, controls)[0] + yu

    lo, hi = c, 2.0
    m = brentq(mismatch, lo, hi, xtol=1e-15, rtol=1e-15)
    y_ret, t_exc = _excursion_from(c, beta, nu, m, yu, controls)
    left = duffing_field(label="duffing")
    right = _right_field(beta, nu, m)
    system = PiecewiseSystem([left, right], [coordinate_surface(0, c, 2, label="x-c")],
                             {"-": 0, "+": 1}, label="tier-b")
    return TierB(system, c, beta, nu, float(m), yu, abs(y_ret + yu), t_exc)


def _excursion_from(c, beta, nu, m, y0, controls):
    """Right-field arc starting on the surface; the start point is not an event."""
    from .flow import _advance, DenseArc
    f = _right_field(beta, nu, m)
    surf = coordinate_surface(0, c, 2)
    arc = DenseArc(f, 0.0, np.array([c, y0]))
    hit = _advance(arc, f, 50.0, controls, [surf], [False])
    if hit is None:
        raise RuntimeError("right arc did not return to the surface")
    t, x, _ = hit
    return float(x[1]), float(t)


def forcing_field(period: float, amplitude: float = 1.0) -> SmoothField:
    """``(0, amplitude cos(2 pi t / period))``."""
    return harmonic_field([0.0, amplitude], period, label="forcing")


def tier_b_extended(epsilon: float = 0.05, period: float = 2.0, c: float = 0.7, beta: float = 1.5,
                    nu: float = -0.5) -> ExtendedSystem:
    tb = tier_b(c, beta, nu)
    return ExtendedSystem(tb.system, forcing_field(period), epsilon, period)


def linear_saddle_map(alpha_s: float = 0.5, alpha_u: float = 2.0) -> LinearMap:
    return LinearMap(np.diag([alpha_u, alpha_s]))
