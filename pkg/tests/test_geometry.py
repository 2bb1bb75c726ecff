import math

import numpy as np
import pytest

from harlsim.geometry import (
    LEFT,
    RIGHT,
    STRAIGHT,
    ZONE_CROSSING,
    ZONE_DEPARTED,
    ZONE_OPTIMIZATION,
    ZONE_OUTSIDE,
    GeometryError,
    IntersectionSpec,
    build_intersection,
    locate,
    movements_for_lane,
)


@pytest.fixture(scope="module")
def inter():
    return build_intersection(IntersectionSpec())


def test_sixteen_connections(inter):
    # 4 approaches x 2 lanes x 2 movements per lane
    assert inter.n_connections == 16
    per_lane = {}
    for c in inter.connections:
        per_lane.setdefault(c.entrance_lane, []).append(c.movement)
    assert len(per_lane) == 8
    for lane, movements in per_lane.items():
        assert sorted(movements) == sorted(movements_for_lane(lane % 2))


def test_rejects_bad_specs():
    with pytest.raises(GeometryError):
        build_intersection(IntersectionSpec(approaches=3))
    with pytest.raises(GeometryError):
        build_intersection(IntersectionSpec(lane_width=-1.0))
    with pytest.raises(GeometryError):
        build_intersection(IntersectionSpec(metric_boundary=200.0))


def test_perpendicular_straights_cross_once(inter):
    souths = [c for c in inter.connections if c.entrance_approach == 2 and c.movement == STRAIGHT]
    easts = [c for c in inter.connections if c.entrance_approach == 1 and c.movement == STRAIGHT]
    a, b = souths[0], easts[0]
    shared = [
        p for p in inter.conflict_points
        if a.id in p.involved_connections and b.id in p.involved_connections
    ]
    assert len(shared) == 1


def test_same_lane_diverge_is_not_a_conflict(inter):
    # straight and right turn from the same outer lane share their entry
    # segment; overlap must not create a conflict point between them
    for lane in inter.entry_lanes:
        conns = inter.connections_on_entrance_lane(lane)
        for i in range(len(conns)):
            for j in range(i + 1, len(conns)):
                shared = [
                    p for p in inter.conflict_points
                    if conns[i].id in p.involved_connections
                    and conns[j].id in p.involved_connections
                ]
                assert shared == []


def test_right_turns_have_no_conflict_points(inter):
    for c in inter.connections:
        if c.movement == RIGHT:
            assert c.conflict_point_ids == ()


def test_conflict_point_invariants(inter):
    hx = inter.spec.inner_box_half_extent
    for p in inter.conflict_points:
        assert len(p.involved_connections) >= 2
        assert abs(p.position[0]) < hx and abs(p.position[1]) < hx
        for cid in p.involved_connections:
            c = inter.connections[cid]
            assert 0.0 < p.distance_along[cid] < c.length
            # the point actually lies on the path at the recorded distance
            x, y = c.point_at(p.distance_along[cid])
            assert math.hypot(x - p.position[0], y - p.position[1]) < 0.25


def test_conflict_symmetry(inter):
    # membership is a set property: if p involves (A, B) it involves (B, A);
    # check via distance_along having entries for every involved connection
    for p in inter.conflict_points:
        assert set(p.distance_along.keys()) == set(p.involved_connections)


def test_connection_distances_strictly_increasing(inter):
    for c in inter.connections:
        d = c.conflict_distances
        assert all(d[i] < d[i + 1] for i in range(len(d) - 1))
        for x in d:
            assert 0.0 < x < c.length


def test_rebuild_is_identical(inter):
    other = build_intersection(IntersectionSpec())
    assert other.n_connections == inter.n_connections
    assert other.n_conflict_points == inter.n_conflict_points
    for a, b in zip(inter.connections, other.connections):
        assert a.id == b.id
        assert a.movement == b.movement
        assert a.conflict_point_ids == b.conflict_point_ids
        assert np.allclose(a.path, b.path)
        assert a.conflict_distances == b.conflict_distances
    for p, q in zip(inter.conflict_points, other.conflict_points):
        assert p.id == q.id
        assert p.position == q.position
        assert p.involved_connections == q.involved_connections


def test_locate_zones(inter):
    spec = inter.spec
    c = inter.connections[0]
    outer = c.stop_s - spec.optimization_zone_depth
    assert locate(outer - 5.0, c, spec) == ZONE_OUTSIDE
    assert locate((outer + c.stop_s) / 2.0, c, spec) == ZONE_OPTIMIZATION
    assert locate(c.stop_s + 0.1, c, spec) == ZONE_CROSSING
    assert locate(c.exit_s + 0.1, c, spec) == ZONE_DEPARTED
    assert locate(c.length + 100.0, c, spec) == ZONE_DEPARTED


def test_locate_is_monotone(inter):
    order = [ZONE_OUTSIDE, ZONE_OPTIMIZATION, ZONE_CROSSING, ZONE_DEPARTED]
    for c in inter.connections:
        last = -1
        for s in np.linspace(0.0, c.length, 400):
            z = order.index(locate(float(s), c, inter.spec))
            assert z >= last
            last = z


def test_left_turn_flag_consistent(inter):
    for c in inter.connections:
        assert c.is_left_turn == (c.movement == LEFT)


def test_opposing_left_turns_do_not_conflict(inter):
    lefts = {c.entrance_approach: c for c in inter.connections if c.movement == LEFT}
    for a, b in ((0, 2), (1, 3)):
        shared = [
            p for p in inter.conflict_points
            if lefts[a].id in p.involved_connections and lefts[b].id in p.involved_connections
        ]
        assert shared == []
