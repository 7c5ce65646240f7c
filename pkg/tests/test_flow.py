import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pslambda.benchmarks import example1_flow, tier_a_systems
from pslambda.errors import CrossingTimeError, FlowObstruction, TangencyError
from pslambda.flow import (FlowControls, Status, crossing_time, flow_map, integrate_smooth, locate_event, solve)
from pslambda.systems import PiecewiseSystem, constant_field, coordinate_surface, linear_field, polynomial_field


class TestIntegrateSmooth:
    def test_upper_field_translation(self, ex1):
        arc = integrate_smooth(ex1.components[1], [0.0, -0.5], 0.0, 0.3)
        np.testing.assert_allclose(arc.x1, [0.0, -0.2], atol=1e-14)

    def test_zero_duration_is_identity(self):
        arc = integrate_smooth(linear_field([[1.0, 0.0], [0.0, -1.0]]), [0.3, 0.4], 0.0, 0.0)
        np.testing.assert_array_equal(arc.x1, [0.3, 0.4])

    def test_linear_saddle_closed_form(self):
        arc = integrate_smooth(linear_field([[1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0], 0.0, math.log(2.0))
        np.testing.assert_allclose(arc.x1, [2.0, 0.5], rtol=1e-9)

    def test_backward_time(self):
        f = linear_field([[1.0, 0.0], [0.0, -1.0]])
        arc = integrate_smooth(f, [2.0, 0.5], 0.0, -math.log(2.0))
        np.testing.assert_allclose(arc.x1, [1.0, 1.0], rtol=1e-9)

    def test_dense_output_interpolates(self):
        f = linear_field([[0.0, 1.0], [-1.0, 0.0]])
        arc = integrate_smooth(f, [1.0, 0.0], 0.0, 3.0)
        for t in np.linspace(0, 3, 17):
            np.testing.assert_allclose(arc(t), [math.cos(t), -math.sin(t)], atol=1e-8)

    def test_blow_up_flagged(self):
        f = polynomial_field([[(1.0, (2, 0))], [(0.0, (0, 0))]])
        arc = integrate_smooth(f, [1.0, 0.0], 0.0, 2.0, FlowControls(max_norm=1e6))
        assert arc.status == "blew-up"


class TestLocateEvent:
    def test_example1_lower_field(self, ex1):
        arc = integrate_smooth(ex1.components[0], [0.0, -0.5], 0.0, 1.0)
        t, i = locate_event(arc, ex1.surfaces)
        assert i == 0
        assert t == pytest.approx(0.5, abs=1e-12)

    def test_no_sign_change(self, ex1):
        arc = integrate_smooth(ex1.components[1], [0.0, 0.5], 0.0, 1.0)
        assert locate_event(arc, ex1.surfaces) is None

    def test_grazing_touch_is_tangency(self):
        # y = (x - 1)^2 touches y = 0 at t = 1 without changing sign
        f = polynomial_field([[(1.0, (0, 0))], [(2.0, (1, 0)), (-2.0, (0, 0))]])
        h = coordinate_surface(1, 0.0, 2)
        with pytest.raises(TangencyError) as exc:
            locate_event(integrate_smooth(f, [0.0, 1.0], 0.0, 2.0), [h])
        assert exc.value.details["t"] == pytest.approx(1.0, abs=1e-9)
        assert locate_event(integrate_smooth(f, [0.0, 1.0], 0.0, 0.9), [h]) is None

    def test_cubic_crossing_is_tangency(self):
        # y = (x - 1)^3 changes sign at t = 1 with zero speed across y = 0
        f = polynomial_field([[(1.0, (0, 0))], [(3.0, (2, 0)), (-6.0, (1, 0)), (3.0, (0, 0))]])
        arc = integrate_smooth(f, [0.0, -1.0], 0.0, 2.0)
        with pytest.raises(TangencyError):
            locate_event(arc, [coordinate_surface(1, 0.0, 2)])


class TestCrossingTime:
    def test_guess_converges(self, ex1):
        assert crossing_time(ex1.components[0], ex1.surfaces[0], [0.0, -0.5], 0.4) == pytest.approx(0.5, abs=1e-12)

    def test_on_surface_is_zero(self, ex1):
        assert crossing_time(ex1.components[0], ex1.surfaces[0], [0.3, 0.0], 0.4) == 0.0

    def test_hand_solution(self, ex1):
        tau = crossing_time(ex1.components[0], ex1.surfaces[0], [0.2, -0.8], 0.1)
        assert tau == pytest.approx(0.8, abs=1e-12)

    def test_degenerate_derivative(self):
        f = constant_field([1.0, 0.0])
        with pytest.raises(CrossingTimeError):
            crossing_time(f, coordinate_surface(1, 0.0, 2), [0.0, -0.5], 0.3)


class TestSolve:
    def test_example1_one_crossing(self, ex1):
        traj = solve(ex1, [0.0, -0.5], 0.0, 1.0)
        assert traj.completed and traj.n_events == 1
        assert traj.events[0].t == pytest.approx(0.5, abs=1e-12)
        np.testing.assert_allclose(traj.x_end, [0.5, 0.5], atol=1e-12)

    def test_example1_no_crossing(self, ex1):
        traj = solve(ex1, [0.0, 0.5], 0.0, 1.0)
        assert traj.n_events == 0
        np.testing.assert_allclose(traj.x_end, [0.0, 1.5], atol=1e-12)

    def test_reversible_through_crossing(self, ex1):
        fwd = solve(ex1, [0.0, -0.5], 0.0, 1.0)
        back = solve(ex1, fwd.x_end, 1.0, -1.0)
        np.testing.assert_allclose(back.x_end, [0.0, -0.5], atol=1e-8)

    def test_arcs_partition_time(self, ex1):
        traj = solve(ex1, [0.1, -1.5], 0.0, 3.0)
        ts = [(a.t_start, a.t_end) for a in traj.arcs]
        assert ts[0][0] == 0.0 and ts[-1][1] == pytest.approx(3.0)
        for (a0, a1), (b0, b1), ev in zip(ts, ts[1:], traj.events):
            assert a1 == b0 == ev.t
        for a, b in zip(traj.arcs, traj.arcs[1:]):
            np.testing.assert_allclose(a.x_end, b.x_start, atol=1e-12)

    def test_event_residual_below_tolerance(self, ex1):
        c = FlowControls()
        traj = solve(ex1, [0.1, -1.5], 0.0, 3.0, c)
        assert all(e.residual <= c.event_tol for e in traj.events)

    def test_non_crossing_obstruction(self):
        sys1 = PiecewiseSystem([constant_field([0.0, 1.0]), constant_field([0.0, -1.0])],
                               [coordinate_surface(1, 0.0, 2)], {"-": 0, "+": 1})
        traj = solve(sys1, [0.0, -0.5], 0.0, 1.0)
        assert traj.status is Status.HIT_NON_CROSSING
        assert traj.obstruction["point_class"] in ("tangency", "sliding", "non-crossing")
        with pytest.raises(FlowObstruction):
            traj.require_completed()

    def test_event_cap(self):
        split, _ = tier_a_systems()
        assert solve(split, [0.0, 1.0], 0.0, 30.0).n_events > 2
        traj = solve(split, [0.0, 1.0], 0.0, 30.0, FlowControls(max_events=2))
        assert traj.status is Status.CAP_EXCEEDED

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 3))
    def test_example1_oracle(self, ex1, x, y, T):
        np.testing.assert_allclose(flow_map(ex1, [x, y], 0.0, T), example1_flow(x, y, T), atol=1e-9)

    @given(st.floats(-1.5, 1.0), st.floats(0.01, 1.5), st.floats(0.01, 1.5))
    def test_group_property(self, ex1, y, T1, T2):
        x0 = [0.2, y]
        a = flow_map(ex1, flow_map(ex1, x0, 0.0, T1), T1, T2)
        b = flow_map(ex1, x0, 0.0, T1 + T2)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_smooth_split_matches_unsplit(self, rng):
        split, smooth = tier_a_systems()
        for _ in range(10):
            x0 = rng.uniform([-1.2, -0.4], [1.2, 0.4])
            a = solve(split, x0, 0.0, 4.0)
            b = solve(smooth, x0, 0.0, 4.0)
            np.testing.assert_allclose(a.x_end, b.x_end, atol=1e-7)

    def test_exports(self, ex1, tmp_path):
        traj = solve(ex1, [0.0, -0.5], 0.0, 1.0)
        traj.write_csv(tmp_path / "t.csv", points_per_arc=5)
        traj.write_events(tmp_path / "e.json")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,x0,x1,arc" and len(lines) == 11
        assert '"residual"' in (tmp_path / "e.json").read_text()
