import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from rmpcdrive.errors import CollisionDetected, NonPositiveGap, ValidationError
from rmpcdrive.idm import (
    IdmParams,
    LongitudinalState,
    SpeedProfile,
    desired_gap,
    equilibrium_gap,
    free_road_acceleration,
    idm_acceleration,
    make_platoon,
    platoon_step,
)

P = IdmParams()  # s0=2, t_gap=1.5, a=1.5, b=2, v_des=30, delta=4


def test_desired_gap_examples():
    assert desired_gap(P, 0.0, 0.0) == pytest.approx(2.0, abs=1e-12)
    assert desired_gap(P, 15.0, 0.0) == pytest.approx(24.5, abs=1e-12)
    # interaction term 15*3 / (2 sqrt(3)) by hand
    assert desired_gap(P, 15.0, 3.0) == pytest.approx(24.5 + 45.0 / (2.0 * math.sqrt(3.0)), abs=1e-12)
    assert desired_gap(P, 15.0, 3.0) == pytest.approx(37.4904, abs=1e-4)


def test_desired_gap_clamped_when_gap_opens_fast():
    assert desired_gap(P, 10.0, -100.0) == 0.0


def test_acceleration_examples():
    assert idm_acceleration(P, P.v_des, 1e9, 0.0) == pytest.approx(0.0, abs=1e-9)
    assert idm_acceleration(P, 0.0, 1e9, 0.0) == pytest.approx(P.a_max, abs=1e-9)
    s_star = 2.0 + 22.5 + 45.0 / (2.0 * math.sqrt(3.0))
    oracle = 1.5 * (1.0 - 0.5**4 - (s_star / 30.0) ** 2)
    assert idm_acceleration(P, 15.0, 30.0, 3.0) == pytest.approx(oracle, abs=1e-12)
    assert idm_acceleration(P, 15.0, 30.0, 3.0) == pytest.approx(-0.9363, abs=1e-4)


def test_nonpositive_gap_raises():
    with pytest.raises(NonPositiveGap):
        idm_acceleration(P, 10.0, 0.0, 0.0)


def test_equilibrium_gap_matches_root_finder():
    for v in (0.0, 5.0, 15.0, 20.0, 29.0):
        root = brentq(lambda s: idm_acceleration(P, v, s, 0.0), 0.5, 1e5, xtol=1e-13, rtol=1e-15)
        assert equilibrium_gap(P, v) == pytest.approx(root, rel=1e-10)


def test_equilibrium_gap_undefined_at_desired_speed():
    with pytest.raises(ValueError):
        equilibrium_gap(P, P.v_des)


@given(st.floats(0.0, 29.5))
def test_zero_acceleration_at_equilibrium(v):
    assert idm_acceleration(P, v, equilibrium_gap(P, v), 0.0) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.0, 40.0), st.floats(-20.0, 20.0), st.floats(-20.0, 20.0))
def test_desired_gap_nonnegative_and_monotone_in_closing_speed(v, dv1, dv2):
    lo, hi = sorted((dv1, dv2))
    assert 0.0 <= desired_gap(P, v, lo) <= desired_gap(P, v, hi)


@given(st.floats(0.0, 40.0), st.floats(0.1, 500.0), st.floats(0.1, 500.0), st.floats(-10.0, 10.0))
def test_acceleration_bounded_and_increasing_in_gap(v, s1, s2, dv):
    lo, hi = sorted((s1, s2))
    a_lo, a_hi = idm_acceleration(P, v, lo, dv), idm_acceleration(P, v, hi, dv)
    assert a_hi <= P.a_max + 1e-12
    assert a_lo <= a_hi + 1e-12
    assert a_hi <= free_road_acceleration(P, v) + 1e-12


def test_single_leader_constant_speed():
    pl = make_platoon([(LongitudinalState(0.0, 20.0), P)])
    nxt = platoon_step(pl, 0.1)
    assert nxt.states[0].x == pytest.approx(2.0, abs=1e-12)
    assert nxt.states[0].v == 20.0
    assert nxt.t == pytest.approx(0.1)


def test_follower_at_equilibrium_stays():
    v = 20.0
    s = equilibrium_gap(P, v)
    pl = make_platoon([(LongitudinalState(100.0, v), P), (LongitudinalState(100.0 - P.length - s, v), P)])
    assert pl.accelerations()[1] == pytest.approx(0.0, abs=1e-12)
    for _ in range(100):
        pl = platoon_step(pl, 0.1)
    assert pl.gaps()[0] == pytest.approx(s, abs=1e-9)


def test_leader_follows_profile():
    prof = SpeedProfile(((0.0, 20.0), (1.0, 10.0)))
    pl = make_platoon([(LongitudinalState(0.0, 20.0), P)], prof)
    for _ in range(20):
        pl = platoon_step(pl, 0.1)
    assert pl.states[0].v == 10.0
    assert pl.states[0].x == pytest.approx(10 * 2.0 + 10 * 1.0, abs=1e-9)


def test_overlapping_platoon_rejected():
    with pytest.raises(ValidationError):
        make_platoon([(LongitudinalState(10.0, 10.0), P), (LongitudinalState(8.0, 10.0), P)])


def test_collision_detected_on_coarse_step():
    # one 50 s step lets the follower cover the whole gap before it can brake
    pl = make_platoon(
        [(LongitudinalState(1000.0 + P.length, 0.0), P), (LongitudinalState(0.0, 30.0), P)],
        SpeedProfile.constant(0.0),
    )
    with pytest.raises(CollisionDetected):
        platoon_step(pl, 50.0)


def test_invalid_params():
    with pytest.raises(ValidationError):
        IdmParams(a_max=0.0)
    with pytest.raises(ValidationError):
        LongitudinalState(0.0, -1.0)
    with pytest.raises(ValidationError):
        SpeedProfile(((1.0, 1.0), (0.0, 2.0)))


@settings(max_examples=25, deadline=None)
@given(st.floats(5.0, 25.0), st.floats(0.0, 25.0), st.floats(20.0, 80.0))
def test_follower_speed_stays_nonnegative(v_lead, v_fol, gap):
    pl = make_platoon([(LongitudinalState(gap + P.length, v_lead), P), (LongitudinalState(0.0, v_fol), P)])
    for _ in range(200):
        pl = platoon_step(pl, 0.1)
        assert pl.states[1].v >= 0.0
        assert pl.gaps()[0] > 0.0
