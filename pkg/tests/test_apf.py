import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmpcdrive.apf import (
    CandidateSet,
    EgoPlanState,
    ObstacleDesc,
    PlannerWeights,
    PotentialScene,
    RoadDesc,
    ShiftedPath,
    candidate_paths,
    lane_potential,
    obstacle_potential,
    plan_trajectory,
    potential_grid,
    potential_terms,
    quintic_path,
    road_potential,
    score_candidate,
    total_potential,
)
from rmpcdrive.errors import NoFeasibleCandidate, OutOfRoad, ValidationError

ROAD = RoadDesc()


def test_obstacle_center_and_unit_exponent():
    ob = ObstacleDesc(50.0, 1.0, amp=7.0, width_obs=2.0)
    assert obstacle_potential([ob], 50.0, 1.0, 15.0) == pytest.approx(7.0, abs=1e-12)
    sigma_y = (ob.width_obs / 2) ** 2
    y = 1.0 + math.sqrt(2 * sigma_y)
    assert obstacle_potential([ob], 50.0, y, 15.0) == pytest.approx(7.0 * math.exp(-1), abs=1e-12)


def test_far_second_obstacle_adds_nothing():
    a = ObstacleDesc(50.0, 0.0, amp=3.0)
    b = ObstacleDesc(1050.0, 0.0, amp=5.0)
    assert obstacle_potential([a, b], 50.0, 0.0, 15.0) == pytest.approx(3.0, abs=1e-12)


def test_obstacle_sigma_ahead_and_behind():
    ob = ObstacleDesc(50.0, 0.0, x_dot_obs=10.0, length_obs=4.0)
    # ahead of the obstacle: min of (dv)^2 = 25 and dx^2 = 9
    v = obstacle_potential([ob], 47.0, 0.0, 15.0)
    assert v == pytest.approx(10.0 * math.exp(-9.0 / (2 * 9.0)), rel=1e-12)
    # behind it the length plus the margin sets the spread
    v = obstacle_potential([ob], 53.0, 0.0, 15.0, eps=0.5)
    assert v == pytest.approx(10.0 * math.exp(-9.0 / (2 * 4.5**2)), rel=1e-12)


def test_obstacle_validation():
    with pytest.raises(ValidationError):
        ObstacleDesc(0.0, 0.0, amp=0.0)
    with pytest.raises(ValidationError):
        ObstacleDesc(0.0, 0.0, length_obs=-1.0)


def test_lane_potential_values():
    road = RoadDesc(lane_marks=(1.75,), amp_lane=0.5, lane_dist=0.6)
    assert lane_potential(road, 1.75) == pytest.approx(0.5, abs=1e-12)
    assert lane_potential(road, 1.75 + 0.6) == pytest.approx(0.5 * math.exp(-1), abs=1e-12)
    two = RoadDesc(lane_marks=(0.0, 3.5), lane_dist=1.0, amp_lane=0.5, y_road_min=-2.0, y_road_max=6.0)
    assert lane_potential(two, 1.75) == pytest.approx(2 * 0.5 * math.exp(-3.0625), abs=1e-12)


def test_road_potential_values():
    road = RoadDesc(lane_marks=(3.5,), y_road_min=0.0, y_road_max=7.0, road_gain=1.0)
    assert road_potential(road, 3.5) == pytest.approx((2 / 3.5) ** 2 / 2, abs=1e-12)
    assert road_potential(road, 3.5) == pytest.approx(0.163265, abs=1e-6)
    assert road_potential(road, 7.0 - 1e-4) > 1e6
    with pytest.raises(OutOfRoad):
        road_potential(road, 7.0)


@given(st.floats(0.01, 6.99))
def test_road_potential_symmetric(y):
    road = RoadDesc(lane_marks=(3.5,), y_road_min=0.0, y_road_max=7.0, road_gain=1.0)
    assert road_potential(road, y) == pytest.approx(road_potential(road, 7.0 - y), rel=1e-9)


def test_lane_mark_outside_road_rejected():
    with pytest.raises(ValidationError):
        RoadDesc(lane_marks=(9.0,))


def test_lane_centers():
    assert ROAD.lane_centers == pytest.approx((0.0, 3.5))
    assert ROAD.lane_of(3.0) == 1


def test_empty_scene_is_road_and_lane_terms():
    scene = PotentialScene(ROAD)
    j_obs, j_lane, j_road = potential_terms(scene, 10.0, 0.3, 15.0)
    assert j_obs == 0.0
    assert total_potential(scene, 10.0, 0.3, 15.0) == j_lane + j_road


@given(st.floats(-50, 200), st.floats(-1.7, 5.2), st.floats(0, 30))
def test_total_is_sum_of_terms(x, y, v):
    scene = PotentialScene(ROAD, (ObstacleDesc(60.0, 0.0), ObstacleDesc(90.0, 3.5, 10.0)))
    assert total_potential(scene, x, y, v) == sum(potential_terms(scene, x, y, v))


def test_grid_matches_termwise_oracle():
    scene = PotentialScene(ROAD, (ObstacleDesc(60.0, 0.0), ObstacleDesc(90.0, 3.5, 10.0)))
    xs = np.linspace(0.0, 150.0, 200)
    ys = np.linspace(ROAD.y_road_min, ROAD.y_road_max, 100)
    grid = potential_grid(scene, xs, ys, 15.0)
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            if ROAD.y_road_min < yv < ROAD.y_road_max:
                oracle = (
                    obstacle_potential(scene.obstacles, xv, yv, 15.0, ROAD.safety_eps)
                    + lane_potential(ROAD, yv)
                    + road_potential(ROAD, yv)
                )
                assert grid[i, j] == oracle
            else:
                assert np.isnan(grid[i, j])


# -- quintic references -----------------------------------------------------------


def test_quintic_constant_when_endpoints_equal():
    p = quintic_path(1.0, 1.0, 50.0)
    xs = np.linspace(0, 50, 11)
    assert np.all(p.y(xs) == pytest.approx(1.0))
    assert np.allclose(p.dy(xs), 0.0) and np.allclose(p.ddy(xs), 0.0)


def test_quintic_midpoint_and_boundaries():
    p = quintic_path(0.0, 3.5, 60.0)
    assert p.y(30.0) == pytest.approx(1.75, abs=1e-12)
    for x in (0.0, 60.0):
        assert p.dy(x) == pytest.approx(0.0, abs=1e-9)
        assert p.ddy(x) == pytest.approx(0.0, abs=1e-9)
    assert p.y(-5.0) == 0.0 and p.y(100.0) == pytest.approx(3.5)


@given(st.floats(-2, 2), st.floats(-2, 5), st.floats(20, 100), st.floats(-0.1, 0.1), st.floats(-0.01, 0.01))
def test_quintic_honours_initial_state(y0, y1, x_m, dy0, ddy0):
    p = quintic_path(y0, y1, x_m, dy0, ddy0)
    assert p.y(0.0) == pytest.approx(y0, abs=1e-9)
    assert p.dy(0.0) == pytest.approx(dy0, abs=1e-9)
    assert p.ddy(0.0) == pytest.approx(ddy0, abs=1e-9)
    assert p.y(x_m) == pytest.approx(y1, abs=1e-9)
    assert p.dy(x_m) == pytest.approx(0.0, abs=1e-9)
    # finite-difference check of the analytic slope
    h = 1e-5
    xm = 0.37 * x_m
    assert p.dy(xm) == pytest.approx((p.y(xm + h) - p.y(xm - h)) / (2 * h), abs=1e-6)


def test_shifted_path():
    p = quintic_path(0.0, 3.5, 60.0)
    s = ShiftedPath(p, 20.0)
    assert s.y(10.0) == p.y(30.0)
    assert s.dy(10.0) == p.dy(30.0)
    assert s.y1 == 3.5


# -- planner ----------------------------------------------------------------------


def _all_scores(scene, ego, w, target):
    dx = ego.v_x * w.ts_plan
    xs = dx * np.arange(w.n_traj + 1)
    y_ref = quintic_path(ego.y, target, CandidateSet().ref_length).y(xs)
    out = []
    for label, path in candidate_paths(ego, scene.road, CandidateSet()):
        _, cost, _, ok, _ = score_candidate(path, y_ref, scene, ego, w)
        out.append((cost if ok else math.inf, label))
    return out


def test_empty_road_keeps_lane():
    scene = PotentialScene(ROAD)
    traj = plan_trajectory(scene, EgoPlanState(0.0, 0.0, 15.0), PlannerWeights())
    assert traj.label == "keep"
    assert np.allclose(traj.y, 0.0)
    assert np.allclose(traj.psi, 0.0) and np.allclose(traj.psi_dot, 0.0)
    assert traj.n_samples == PlannerWeights().n_traj + 1


def test_static_obstacle_ahead_moves_to_adjacent_lane():
    scene = PotentialScene(ROAD, (ObstacleDesc(60.0, 0.0),))
    ego = EgoPlanState(0.0, 0.0, 15.0)
    w = PlannerWeights()
    traj = plan_trajectory(scene, ego, w, target_y=3.5)
    assert abs(traj.y[-1] - 3.5) <= 0.2
    best_cost, best_label = min(_all_scores(scene, ego, w, 3.5))
    assert traj.label == best_label
    assert traj.cost == pytest.approx(best_cost, rel=1e-12)


def test_zero_potential_weight_picks_pure_tracking():
    scene = PotentialScene(ROAD, (ObstacleDesc(40.0, 3.5), ObstacleDesc(30.0, 0.0)))
    w = PlannerWeights(s_traj=0.0, r_traj=0.0)
    traj = plan_trajectory(scene, EgoPlanState(0.0, 0.0, 15.0), w, target_y=3.5)
    assert traj.label == f"y=+3.50/L={CandidateSet().ref_length:g}"
    assert traj.breakdown["tracking"] == pytest.approx(0.0, abs=1e-20)


def test_samples_consistent_with_headings():
    scene = PotentialScene(ROAD, (ObstacleDesc(60.0, 0.0),))
    w = PlannerWeights()
    traj = plan_trajectory(scene, EgoPlanState(0.0, 0.0, 15.0), w, target_y=3.5)
    dx = 15.0 * w.ts_plan
    assert np.allclose(np.tan(traj.psi[:-1]), np.diff(traj.y) / dx, rtol=1e-12, atol=1e-15)
    assert np.allclose(traj.psi_dot[:-1], np.diff(traj.psi) / w.ts_plan, atol=1e-15)


def test_continue_candidate_reproduces_current_plan():
    scene = PotentialScene(ROAD, (ObstacleDesc(60.0, 0.0),))
    w = PlannerWeights()
    first = plan_trajectory(scene, EgoPlanState(0.0, 0.0, 15.0), w, target_y=3.5)
    x = 15.0
    y, dy, ddy = first.lateral_state(x)
    again = plan_trajectory(
        scene, EgoPlanState(x, y, 15.0, dy, ddy), w, target_y=3.5, current=first, reference=(first.path, 0.0)
    )
    assert again.label == "continue"
    assert np.allclose(again.y[:-10], first.path.y(again.x[:-10] - first.x0), atol=1e-12)


def test_no_feasible_candidate():
    w = PlannerWeights(potential_ceiling=1e-6)
    with pytest.raises(NoFeasibleCandidate):
        plan_trajectory(PotentialScene(ROAD), EgoPlanState(0.0, 0.0, 15.0), w)


def test_start_outside_road():
    with pytest.raises(OutOfRoad):
        plan_trajectory(PotentialScene(ROAD), EgoPlanState(0.0, 9.0, 15.0), PlannerWeights())
