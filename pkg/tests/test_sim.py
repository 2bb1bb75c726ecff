import math

import numpy as np
import pytest

from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.idm import FORM_STANDARD, IdmParams, desired_gap, idm_accel
from harlsim.sim import (
    CAV,
    FUEL_IDLE,
    HV,
    Vehicle,
    World,
    WorldConfig,
    detect_collisions,
    fuel_rate,
)


@pytest.fixture(scope="module")
def inter():
    return build_intersection(IntersectionSpec())


def make_world(inter, **kw):
    kw.setdefault("seed", 7)
    return World(inter, WorldConfig(**kw))


# ----------------------------------------------------------------------- idm


def test_idm_free_road_from_rest():
    p = IdmParams()
    assert idm_accel(0.0, None, None, p) == pytest.approx(2.5)


def test_idm_at_desired_speed_free_road():
    p = IdmParams()
    assert idm_accel(p.v0, None, None, p) == pytest.approx(0.0)


def test_idm_at_desired_gap_and_speed():
    p = IdmParams()
    gap = desired_gap(p.v0, 0.0, p)
    assert idm_accel(p.v0, gap, p.v0, p) == pytest.approx(-p.a_max)


def test_idm_emergency_on_nonpositive_gap():
    p = IdmParams()
    assert idm_accel(5.0, 0.0, 3.0, p) == pytest.approx(-5.0)
    assert idm_accel(5.0, -1.0, 3.0, p) == pytest.approx(-5.0)


def test_idm_standard_form_switch():
    p = IdmParams(form=FORM_STANDARD)
    assert idm_accel(0.0, None, None, p) == pytest.approx(2.5)
    assert idm_accel(p.v0, None, None, p) == pytest.approx(0.0)
    # squared interaction term at the desired gap
    gap = desired_gap(p.v0, 0.0, p)
    assert idm_accel(p.v0, gap, p.v0, p) == pytest.approx(-p.a_max)


def test_idm_clamped_to_envelope():
    p = IdmParams()
    assert idm_accel(15.0, 0.5, 0.0, p) == -5.0


# ---------------------------------------------------------------------- fuel


def test_fuel_idle_floor():
    assert fuel_rate(0.0, 0.0) == pytest.approx(FUEL_IDLE)


def test_fuel_braking_has_no_traction_term():
    assert fuel_rate(10.0, -2.0) == pytest.approx(fuel_rate(10.0, 0.0))


def test_fuel_monotone_in_acceleration_and_speed():
    assert fuel_rate(10.0, 1.0) >= fuel_rate(10.0, 0.0)
    speeds = np.linspace(0.0, 15.0, 40)
    rates = [fuel_rate(float(v), 0.5) for v in speeds]
    assert all(rates[i] <= rates[i + 1] + 1e-12 for i in range(len(rates) - 1))


# --------------------------------------------------------------------- spawn


def test_mean_headway(inter):
    w = make_world(inter, flow_rate=450.0)
    assert w._mean_headway() == pytest.approx(8.0)


def test_hv_fraction_zero_spawns_only_cavs(inter):
    w = make_world(inter, hv_fraction=0.0)
    for _ in range(300):
        w.step()
    assert len(w.vehicles) > 0
    assert all(v.kind == CAV for v in w.vehicles.values())


def test_blocked_entry_defers_and_loses_nothing(inter):
    w = make_world(inter, flow_rate=100.0, hv_fraction=0.0)
    lane = 0
    # jam the entry with a stopped vehicle just inside
    blocker = Vehicle(id=999, kind=HV, connection_id=0, s=4.0, v=0.0)
    w.vehicles[blocker.id] = blocker
    assert w.spawn(lane, kind=CAV, connection_id=0) is None
    assert w.pending_count == 1
    before = {v.id for v in w.vehicles.values()}
    # free the lane; the queued arrival must enter on the next step
    del w.vehicles[blocker.id]
    w.step()
    spawned = [v for v in w.vehicles.values() if v.id not in before]
    assert any(v.connection_id == 0 for v in spawned)
    assert w.pending_count == 0


# ---------------------------------------------------------------------- step


def test_step_kinematics(inter):
    w = make_world(inter, flow_rate=1.0, hv_fraction=0.0)
    veh = w.spawn(0, kind=CAV, connection_id=0)
    veh.v = 10.0
    s0 = veh.s
    w.step({veh.id: 0.5})
    assert veh.v == pytest.approx(10.5)
    assert veh.s == pytest.approx(s0 + 10.5 * 0.2)


def test_step_clamps_speed_at_vmax(inter):
    w = make_world(inter, flow_rate=1.0, hv_fraction=0.0)
    veh = w.spawn(0, kind=CAV, connection_id=0)
    veh.v = 14.9
    w.step({veh.id: 0.5})
    assert veh.v == pytest.approx(15.0)


def test_step_determinism(inter):
    def run():
        w = make_world(inter, seed=123, flow_rate=600.0)
        for _ in range(200):
            w.step()
        return w.events

    a, b = run(), run()
    assert a == b


def test_speed_bounds_and_monotonicity(inter):
    w = make_world(inter, seed=5, flow_rate=900.0)
    last_s = {}
    for _ in range(300):
        w.step()
        for vid, veh in w.vehicles.items():
            assert 0.0 <= veh.v <= 15.0
            if vid in last_s:
                assert veh.s >= last_s[vid]
            last_s[vid] = veh.s


def test_hold_stops_before_stop_line(inter):
    w = make_world(inter, flow_rate=1.0, hv_fraction=0.0)
    veh = w.spawn(0, kind=HV, connection_id=0)
    conn = w.intersection.connections[0]
    veh.s = conn.stop_s - 50.0
    veh.v = 12.0
    for _ in range(300):
        w.step(hold_ids={veh.id})
        if veh.id not in w.vehicles:
            pytest.fail("held vehicle crossed the stop line")
        if veh.v < 1e-3:
            break
    assert veh.v < 1e-3
    assert veh.s < conn.stop_s


# ----------------------------------------------------------------- collisions


def test_no_collision_when_far_apart(inter):
    w = make_world(inter, flow_rate=1.0)
    a = w.spawn(0, kind=HV, connection_id=0)
    a.s = 50.0
    b = w.spawn(0, kind=HV, connection_id=0)
    b.s = a.s - a.length - 10.0  # 10 m bumper gap
    assert detect_collisions(w) == set()


def test_collision_at_conflict_point(inter):
    point = next(p for p in inter.conflict_points if len(p.involved_connections) >= 2)
    ca, cb = sorted(point.involved_connections)[:2]
    w = make_world(inter, flow_rate=1.0)
    a = w.spawn(0, kind=HV, connection_id=ca)
    b = w.spawn(0, kind=HV, connection_id=cb)
    a.s = point.distance_along[ca] + a.length / 2.0
    b.s = point.distance_along[cb] + b.length / 2.0
    pairs = detect_collisions(w)
    assert pairs == {(a.id, b.id)}


def test_corner_graze_is_reported(inter):
    w = make_world(inter, flow_rate=1.0)
    a = w.spawn(0, kind=HV, connection_id=0)
    a.s = 50.0
    b = w.spawn(0, kind=HV, connection_id=0)
    b.s = a.s - a.length + 0.01  # 1 cm longitudinal overlap
    assert detect_collisions(w) == {(a.id, b.id)}
    b.s = a.s - a.length - 0.01  # 1 cm clearance
    assert detect_collisions(w) == set()


def test_single_lane_hv_car_following_is_collision_free(inter):
    # 6 simulated minutes of human drivers feeding one lane at 450 veh/lane/h
    w = make_world(
        inter, seed=11, flow_rate=450.0, hv_fraction=1.0, spawn_lanes=(0,)
    )
    for _ in range(1800):
        w.step()
    assert w.collision_count == 0
    assert any(e["event"] == "departure" for e in w.events)


def test_event_log_roundtrip(tmp_path, inter):
    from harlsim.sim import read_events_jsonl

    w = make_world(inter, seed=3, flow_rate=600.0)
    for _ in range(100):
        w.step()
    path = str(tmp_path / "events.jsonl")
    w.write_events_jsonl(path)
    assert read_events_jsonl(path) == w.events
