import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pslambda.errors import JacobianUndefinedError, TangencyError
from pslambda.flow import flow_map, integrate_smooth, solve
from pslambda.systems import PiecewiseSystem, constant_field, coordinate_surface, linear_field
from pslambda.variational import crossing_correction, flow_jacobian, jacobian, propagate_smooth, saltation_matrix

vec = st.tuples(st.floats(-5, 5), st.floats(-5, 5))


def fd_flow(system, x, t0, T, h=1e-6):
    cols = []
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h
        cols.append((flow_map(system, x + e, t0, T) - flow_map(system, x - e, t0, T)) / (2 * h))
    return np.array(cols).T


class TestSaltation:
    def test_example1_values(self):
        S = saltation_matrix([1.0, 1.0], [0.0, 1.0], [0.0, 1.0])
        np.testing.assert_array_equal(S, [[1.0, -1.0], [0.0, 1.0]])

    def test_continuous_field_gives_identity(self):
        np.testing.assert_array_equal(saltation_matrix([0.3, 2.0], [0.3, 2.0], [0.0, 1.0]), np.eye(2))

    def test_reverse_roles(self):
        S = saltation_matrix([0.0, 1.0], [1.0, 1.0], [0.0, 1.0])
        np.testing.assert_array_equal(S, [[1.0, 1.0], [0.0, 1.0]])

    def test_tangent_pre_field_refused(self):
        with pytest.raises(TangencyError):
            saltation_matrix([1.0, 0.0], [0.0, 1.0], [0.0, 1.0])

    def test_crossing_correction_checks_post_field(self, ex1):
        with pytest.raises(TangencyError):
            crossing_correction(ex1.components[0], constant_field([1.0, 0.0]), ex1.surfaces[0], [0.0, 0.0])

    @given(vec, vec, vec)
    def test_determinant_is_speed_ratio(self, Xa, Xb, n):
        Xa, Xb, n = map(np.array, (Xa, Xb, n))
        da, db = n @ Xa, n @ Xb
        if abs(da) < 1e-2 or np.linalg.norm(n) < 1e-2:
            return
        S = saltation_matrix(Xa, Xb, n)
        assert np.linalg.det(S) == pytest.approx(db / da, rel=1e-9, abs=1e-9)

    @given(vec, vec, vec)
    def test_maps_pre_velocity_to_post(self, Xa, Xb, n):
        Xa, Xb, n = map(np.array, (Xa, Xb, n))
        if abs(n @ Xa) < 1e-2:
            return
        np.testing.assert_allclose(saltation_matrix(Xa, Xb, n) @ Xa, Xb, atol=1e-9)


class TestSmoothPropagation:
    def test_diagonal_closed_form(self):
        f = linear_field([[1.0, 0.0], [0.0, -1.0]])
        arc = integrate_smooth(f, [0.4, 0.3], 0.0, 1.5)
        np.testing.assert_allclose(propagate_smooth(f, arc), np.diag([math.exp(1.5), math.exp(-1.5)]),
                                   rtol=1e-9)

    def test_tangent_column(self):
        f = linear_field([[0.0, 1.0], [-1.0, 0.0]])
        arc = integrate_smooth(f, [1.0, 0.0], 0.0, math.pi / 2)
        M = propagate_smooth(f, arc, M0=[1.0, 0.0])
        np.testing.assert_allclose(M[:, 0], [0.0, -1.0], atol=1e-9)


class TestFlowJacobian:
    def test_example1_closed_form(self, ex1):
        x_end, J, traj = flow_jacobian(ex1, [0.1, -0.5], 0.0, 1.0)
        assert traj.n_events == 1
        np.testing.assert_allclose(J, [[1.0, -1.0], [0.0, 1.0]], atol=1e-10)

    def test_example1_without_crossing(self, ex1):
        np.testing.assert_allclose(flow_jacobian(ex1, [0.1, 0.5], 0.0, 1.0)[1], np.eye(2), atol=1e-12)

    def test_endpoint_on_switching_set_refused(self, ex1):
        traj = solve(ex1, [0.0, -0.5], 0.0, 0.5)
        with pytest.raises(JacobianUndefinedError):
            jacobian(ex1, traj)

    def test_matches_finite_differences_tier_b(self, tb):
        x0 = np.array([0.35, 0.42])
        _, J, traj = flow_jacobian(tb.system, x0, 0.0, 3.0)
        assert traj.n_events >= 1
        np.testing.assert_allclose(J, fd_flow(tb.system, x0, 0.0, 3.0), rtol=1e-5, atol=1e-6)

    def test_chain_rule(self, tb):
        x0 = np.array([0.35, 0.42])
        x1, J1, _ = flow_jacobian(tb.system, x0, 0.0, 1.3)
        _, J2, _ = flow_jacobian(tb.system, x1, 1.3, 1.7)
        _, J, _ = flow_jacobian(tb.system, x0, 0.0, 3.0)
        np.testing.assert_allclose(J2 @ J1, J, rtol=1e-7, atol=1e-8)

    def test_backward_inverts_forward(self, tb):
        x0 = np.array([0.35, 0.42])
        x1, J, _ = flow_jacobian(tb.system, x0, 0.0, 3.0)
        _, Jb, _ = flow_jacobian(tb.system, x1, 3.0, -3.0)
        np.testing.assert_allclose(Jb @ J, np.eye(2), atol=1e-7)

    def test_surface_scaling_irrelevant(self, ex1):
        scaled = PiecewiseSystem(ex1.components, [coordinate_surface(1, 0.0, 2).scaled(7.0)], {"-": 0, "+": 1})
        np.testing.assert_allclose(flow_jacobian(scaled, [0.1, -0.5], 0.0, 1.0)[1],
                                   flow_jacobian(ex1, [0.1, -0.5], 0.0, 1.0)[1], atol=1e-12)
