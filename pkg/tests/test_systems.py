import math
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pslambda.errors import DomainError, MalformedSystemError
from pslambda.systems import (Corner, Crossing, Interior, NonRegular, PiecewiseSystem, SwitchingFunction, Tangency,
                              classify_point, constant_field, coordinate_surface, duffing_field, linear_field,
                              lie_derivative, polynomial_field, polynomial_surface, sum_field)

finite = st.floats(-10, 10, allow_nan=False)


def opposing_system():
    return PiecewiseSystem([constant_field([0.0, -1.0]), constant_field([0.0, 1.0])],
                           [coordinate_surface(1, 0.0, 2)], {"-": 0, "+": 1})


class TestLieDerivative:
    def test_example1_upper_field(self, ex1):
        assert lie_derivative(ex1.components[1], ex1.surfaces[0], [0.0, 0.0]) == 1.0

    def test_orthogonal_gradient(self):
        h = coordinate_surface(1, 0.0, 2)
        assert lie_derivative(constant_field([3.0, 0.0]), h, [1.0, 2.0]) == 0.0

    def test_tangency_at_origin(self):
        f = polynomial_field([[(1.0, (0, 0))], [(1.0, (1, 0))]])
        assert lie_derivative(f, coordinate_surface(1, 0.0, 2), [0.0, 0.0]) == 0.0

    @given(finite, finite, finite)
    def test_linear_in_field(self, a, x, y):
        h = polynomial_surface([(1.0, (2, 0)), (1.0, (0, 1))], 2)
        f = duffing_field()
        g = linear_field([[0.0, 1.0], [-2.0, 0.3]])
        pt = np.array([x, y])
        lhs = lie_derivative(sum_field(f, g, a), h, pt)
        rhs = lie_derivative(f, h, pt) + a * lie_derivative(g, h, pt)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)

    def test_domain_error_names_map(self):
        h = SwitchingFunction(lambda x: math.log(x[0]), label="log")
        with pytest.raises(DomainError) as exc:
            h([-1.0, 0.0])
        assert exc.value.details["map"] == "log"


class TestClassify:
    def test_example1_crossing(self, ex1):
        c = classify_point(ex1, [0.3, 0.0])
        assert c == Crossing(0, pre=0, post=1, sign=1)

    def test_example1_interior(self, ex1):
        assert classify_point(ex1, [0.3, 0.5]) == Interior(1)
        assert classify_point(ex1, [0.3, -0.5]) == Interior(0)

    def test_opposing_fields_are_not_crossing(self):
        assert classify_point(opposing_system(), [0.0, 0.0]) == Tangency(0)

    def test_corner(self):
        sys2 = PiecewiseSystem([constant_field([1.0, 1.0])] * 4,
                               [coordinate_surface(0, 0.0, 2, index=0), coordinate_surface(1, 0.0, 2, index=1)],
                               {"--": 0, "-+": 1, "+-": 2, "++": 3})
        assert classify_point(sys2, [0.0, 0.0]) == Corner((0, 1))

    def test_non_regular(self):
        h = polynomial_surface([(1.0, (0, 2))], 2)
        sys1 = PiecewiseSystem([constant_field([1.0, 1.0]), constant_field([0.0, 1.0])], [h], {"-": 0, "+": 1})
        assert classify_point(sys1, [0.5, 0.0]) == NonRegular(0)

    def test_reverse_crossing_sign(self):
        sys1 = PiecewiseSystem([constant_field([0.0, -1.0]), constant_field([0.0, -2.0])],
                               [coordinate_surface(1, 0.0, 2)], {"-": 0, "+": 1})
        assert classify_point(sys1, [0.0, 0.0]) == Crossing(0, pre=1, post=0, sign=-1)

    def test_missing_region_is_malformed(self):
        with pytest.raises(MalformedSystemError):
            PiecewiseSystem([constant_field([1.0, 0.0])], [coordinate_surface(0, 0.0, 2)], {"+": 1})

    def test_bad_sign_pattern(self):
        with pytest.raises(MalformedSystemError):
            PiecewiseSystem([constant_field([1.0, 0.0])], [coordinate_surface(0, 0.0, 2)], {"x": 0})

    @given(st.floats(0.01, 100), st.floats(-3, 3), st.floats(-0.5, 0.5))
    def test_positive_rescaling_preserves_class(self, c, x, y):
        base = PiecewiseSystem([constant_field([1.0, 1.0]), constant_field([0.0, 1.0])],
                               [coordinate_surface(1, 0.0, 2)], {"-": 0, "+": 1})
        scaled = PiecewiseSystem(base.components, [base.surfaces[0].scaled(c)], {"-": 0, "+": 1})
        for pt in ([x, y], [x, 0.0]):
            assert classify_point(base, pt, tol=1e-12) == classify_point(scaled, pt, tol=1e-12 * c)

    @given(st.floats(-1e-3, 1e-3))
    def test_crossing_is_open_along_surface(self, tb, dy):
        assert isinstance(classify_point(tb.system, [tb.c, tb.y_cross]), Crossing)
        assert isinstance(classify_point(tb.system, [tb.c, tb.y_cross + dy]), Crossing)

    def test_region_locally_constant(self, tb, rng):
        for _ in range(200):
            x = rng.uniform(-1.5, 1.5, 2)
            if abs(x[0] - tb.c) < 1e-3:
                continue
            x2 = x + rng.normal(scale=1e-6, size=2)
            assert tb.system.component_at(x) == tb.system.component_at(x2)

    def test_adjacency_reports_both_sides(self, ex1):
        assert sorted(ex1.adjacent(0, np.array([0.2, 0.0]))) == [0, 1]


class TestFields:
    def test_polynomial_matches_duffing(self, rng):
        d = duffing_field(1.0, 1.5, 0.0)
        p = polynomial_field([[(1.0, (0, 1))], [(1.0, (1, 0)), (-1.5, (3, 0))]])
        for _ in range(20):
            x = rng.normal(size=2)
            np.testing.assert_allclose(p(x), d(x), rtol=1e-14, atol=1e-14)
            np.testing.assert_allclose(p.jacobian(x), d.jacobian(x), rtol=1e-14, atol=1e-14)

    def test_fd_gradient_fallback(self):
        h = SwitchingFunction(lambda x: x[0] ** 2 + 3 * x[1])
        np.testing.assert_allclose(h.gradient([1.0, 2.0]), [2.0, 3.0], rtol=1e-8)

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(MalformedSystemError):
            PiecewiseSystem([constant_field([1.0, 0.0]), constant_field([1.0, 0.0, 0.0])], [], {(): 0})
