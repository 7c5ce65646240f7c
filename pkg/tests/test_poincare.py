import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pslambda.benchmarks import example1_flow, tier_b_extended
from pslambda.errors import NotHyperbolicError
from pslambda.maps import LinearMap
from pslambda.poincare import (ExtendedSystem, PoincareMap, conjugacy_residual, find_fixed_point,
                               forced_linear_orbit, saddle_from_jacobian, saddle_phase_family)
from pslambda.systems import PiecewiseSystem, coordinate_surface, harmonic_field, linear_field


def forced_saddle(eps, period=2 * math.pi):
    base = PiecewiseSystem([linear_field([[1.0, 0.0], [0.0, -1.0]])], [], {(): 0})
    # amplitude * cos(w t - pi/2) = amplitude * sin(w t)
    return ExtendedSystem(base, harmonic_field([1.0, 0.0], period, phase=-math.pi / 2), eps, period)


class TestPoincareMap:
    def test_example1_matches_closed_form(self, ex1):
        ext = ExtendedSystem(ex1, None, 0.0, period=1.3)
        P = PoincareMap(ext, 0.4)
        for x in ([0.2, -0.9], [-0.1, 0.3], [0.5, -2.0]):
            np.testing.assert_allclose(P(x), example1_flow(*x, 1.3), atol=1e-10)

    def test_inverse_round_trip(self, tb_map, rng):
        for x in rng.uniform([-0.6, -0.4], [0.6, 0.4], (10, 2)):
            np.testing.assert_allclose(tb_map.inverse(tb_map(x)), x, atol=1e-8)

    def test_jacobian_matches_fd(self, tb_map):
        x = np.array([0.3, 0.25])
        _, J = tb_map.evaluate_with_jacobian(x)
        np.testing.assert_allclose(J, tb_map.fd_jacobian(x), rtol=1e-5, atol=1e-6)

    def test_phase_shift_by_period_is_same_map(self, tb_ext):
        x = [0.2, 0.1]
        np.testing.assert_allclose(PoincareMap(tb_ext, 0.3)(x), PoincareMap(tb_ext, 0.3 + tb_ext.period)(x),
                                   atol=1e-9)

    def test_negative_epsilon_rejected(self, tb):
        with pytest.raises(ValueError):
            ExtendedSystem(tb.system, None, -0.1, 2.0)


class TestFixedPoints:
    def test_linear_saddle(self):
        sd = find_fixed_point(LinearMap([[2.0, 0.0], [0.0, 0.5]], offset=[1.0, 1.0]), [0.0, 0.0])
        np.testing.assert_allclose(sd.point, [-1.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(sorted(np.abs(sd.eigenvalues)), [0.5, 2.0])
        assert (sd.s, sd.u) == (1, 1)

    def test_unforced_tier_b_saddle_at_origin(self, tb):
        sd = find_fixed_point(PoincareMap(tier_b_extended(0.0), 0.0), [0.01, -0.01])
        np.testing.assert_allclose(sd.point, [0.0, 0.0], atol=1e-8)
        lam = math.exp(2.0)
        np.testing.assert_allclose(np.abs(sd.eigenvalues), [1 / lam, lam], rtol=1e-7)

    def test_forced_tier_b_saddle_persists(self, tb_saddle):
        assert tb_saddle.is_saddle
        assert np.linalg.norm(tb_saddle.point) < 0.05
        assert tb_saddle.clearance > 0.5
        assert tb_saddle.residual < 1e-10

    def test_not_hyperbolic(self):
        with pytest.raises(NotHyperbolicError):
            saddle_from_jacobian([0.0, 0.0], np.diag([1.0, 0.5]))

    @pytest.mark.parametrize("eps", [0.0, 0.1, 0.3])
    def test_forced_linear_orbit(self, eps):
        ext = forced_saddle(eps)
        for phase in (0.0, 1.0, 2.5):
            sd = find_fixed_point(PoincareMap(ext, phase), [0.0, 0.0])
            assert sd.point[0] == pytest.approx(forced_linear_orbit(phase, eps, 1.0), abs=1e-9)
            assert sd.point[1] == pytest.approx(0.0, abs=1e-12)

    def test_phase_family_spectrum_invariant(self, tb_ext, tb_saddle):
        fam = saddle_phase_family(tb_ext, [0.0, 0.5, 1.0, 1.5], tb_saddle.point)
        assert all(not isinstance(f, dict) for f in fam)
        ref = sorted(np.abs(fam[0].eigenvalues))
        for sd in fam[1:]:
            np.testing.assert_allclose(sorted(np.abs(sd.eigenvalues)), ref, rtol=1e-6)


class TestConjugacy:
    def test_same_section_is_exactly_zero(self, tb_ext):
        r = conjugacy_residual(tb_ext, 0.7, 0.7, [[0.1, 0.2], [-0.3, 0.1]])
        assert r.max_residual == 0.0 and r.failures == 0

    @settings(max_examples=5)
    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_residual_small(self, tb_ext, t1, t2):
        r = conjugacy_residual(tb_ext, t1, t2, [[0.1, 0.2], [0.4, -0.1]])
        assert r.failures == 0
        assert r.max_residual < 1e-7

    def test_failures_are_reported(self):
        base = PiecewiseSystem([linear_field([[0.0, 1.0], [0.0, 0.0]]), linear_field([[0.0, -1.0], [0.0, 0.0]])],
                               [coordinate_surface(0, 0.0, 2)], {"-": 0, "+": 1})
        ext = ExtendedSystem(base, None, 0.0, period=1.0)
        r = conjugacy_residual(ext, 0.0, 0.5, [[-0.2, 1.0], [-0.2, -1.0]])
        assert r.failures >= 1 and "error" in r.failed_points[0]
