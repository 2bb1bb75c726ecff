"""Intersection geometry: approaches, lanes, connections, and conflict points.

The intersection is a four-arm junction centered at the origin. Each arm
carries `entry_lanes_per_approach` inbound lanes (right-hand traffic) and the
same number of outbound lanes. A Connection is one (entrance lane, exit lane)
route; its path is a polyline running from the spawn point, across the inner
box, and out along the exit lane. Conflict points are transversal crossings of
two connection paths inside the inner box; merges and diverges (parallel
touches, shared segments) are intentionally not conflict points -- those are
resolved by car-following in the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

LEFT = "left"
STRAIGHT = "straight"
RIGHT = "right"

# zones along a connection path, in path order
ZONE_OUTSIDE = "outside"
ZONE_OPTIMIZATION = "optimization_area"
ZONE_CROSSING = "crossing_zone"
ZONE_DEPARTED = "departed"

# inbound heading of each approach: 0=N (southbound), 1=E, 2=S, 3=W
_APPROACH_HEADINGS = {
    0: (0.0, -1.0),
    1: (-1.0, 0.0),
    2: (0.0, 1.0),
    3: (1.0, 0.0),
}

# angle below which two crossing directions are treated as a merge/diverge
_MIN_CROSS_ANGLE_DEG = 12.0
_CLUSTER_TOL = 0.05  # meters; polyline crossing error is ~1 cm, true points are >0.1 m apart


class GeometryError(ValueError):
    """Raised for invalid intersection specifications."""


@dataclass(frozen=True)
class IntersectionSpec:
    """Dimensions of the four-arm intersection.

    `optimization_zone_depth` is the distance from the inner box (stop line)
    back to the outer box boundary; `metric_boundary` marks where crossing-time
    measurement starts (30 m from the stop line). `approach_length` is the
    distance from the spawn point to the stop line and must leave room for an
    "outside" stretch upstream of the outer box.
    """

    approaches: int = 4
    entry_lanes_per_approach: int = 2
    lane_width: float = 3.5
    inner_box_half_extent: float = 7.0
    optimization_zone_depth: float = 100.0
    metric_boundary: float = 30.0
    approach_length: float = 130.0
    exit_length: float = 60.0
    arc_segment_max_len: float = 0.5

    def validate(self) -> None:
        if self.approaches != 4:
            raise GeometryError("approaches must be 4, got %r" % (self.approaches,))
        if self.entry_lanes_per_approach != 2:
            raise GeometryError(
                "entry_lanes_per_approach must be 2 (inner serves left+straight, "
                "outer serves straight+right), got %r" % (self.entry_lanes_per_approach,)
            )
        for name in (
            "lane_width",
            "inner_box_half_extent",
            "optimization_zone_depth",
            "metric_boundary",
            "approach_length",
            "exit_length",
            "arc_segment_max_len",
        ):
            value = getattr(self, name)
            if not (value > 0.0):
                raise GeometryError("%s must be strictly positive, got %r" % (name, value))
        if self.metric_boundary > self.optimization_zone_depth:
            raise GeometryError(
                "metric_boundary (%.3f) must not exceed optimization_zone_depth (%.3f)"
                % (self.metric_boundary, self.optimization_zone_depth)
            )
        if self.approach_length < self.optimization_zone_depth:
            raise GeometryError(
                "approach_length (%.3f) must cover the optimization zone depth (%.3f)"
                % (self.approach_length, self.optimization_zone_depth)
            )
        if self.inner_box_half_extent < 2.0 * self.lane_width:
            raise GeometryError(
                "inner_box_half_extent must cover two lanes per direction "
                "(>= 2*lane_width)"
            )


def movements_for_lane(lane_index: int) -> Tuple[str, ...]:
    """Admissible movements by lane: inner (0) left+straight, outer (1) straight+right."""
    if lane_index == 0:
        return (LEFT, STRAIGHT)
    return (STRAIGHT, RIGHT)


@dataclass(frozen=True)
class Connection:
    """One (entrance lane, exit lane) route through the intersection."""

    id: int
    entrance_approach: int
    entrance_lane_index: int
    exit_approach: int
    exit_lane_index: int
    movement: str
    path: np.ndarray  # (K, 2) polyline points, meters
    cum_len: np.ndarray  # (K,) cumulative arc length
    stop_s: float  # path position of the inner box entry (stop line)
    exit_s: float  # path position of the inner box exit
    conflict_point_ids: Tuple[int, ...] = ()
    conflict_distances: Tuple[float, ...] = ()

    @property
    def entrance_lane(self) -> int:
        """Global entry lane id (approach * lanes_per_approach + lane index)."""
        return self.entrance_approach * 2 + self.entrance_lane_index

    @property
    def exit_lane(self) -> int:
        return self.exit_approach * 2 + self.exit_lane_index

    @property
    def length(self) -> float:
        return float(self.cum_len[-1])

    @property
    def is_left_turn(self) -> bool:
        return self.movement == LEFT

    def point_at(self, s: float) -> Tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum_len, s, side="right")) - 1
        i = min(max(i, 0), len(self.cum_len) - 2)
        seg = self.cum_len[i + 1] - self.cum_len[i]
        t = 0.0 if seg <= 0.0 else (s - self.cum_len[i]) / seg
        p = self.path[i] + t * (self.path[i + 1] - self.path[i])
        return float(p[0]), float(p[1])

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum_len, s, side="right")) - 1
        i = min(max(i, 0), len(self.cum_len) - 2)
        d = self.path[i + 1] - self.path[i]
        return math.atan2(float(d[1]), float(d[0]))


@dataclass(frozen=True)
class ConflictPoint:
    """A transversal crossing of two or more connection paths inside the box."""

    id: int
    position: Tuple[float, float]
    involved_connections: frozenset
    distance_along: Dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Intersection:
    spec: IntersectionSpec
    connections: Tuple[Connection, ...]
    conflict_points: Tuple[ConflictPoint, ...]

    @property
    def n_connections(self) -> int:
        return len(self.connections)

    @property
    def n_conflict_points(self) -> int:
        return len(self.conflict_points)

    def connections_on_entrance_lane(self, lane: int) -> List[Connection]:
        return [c for c in self.connections if c.entrance_lane == lane]

    def connections_on_exit_lane(self, lane: int) -> List[Connection]:
        return [c for c in self.connections if c.exit_lane == lane]

    @property
    def entry_lanes(self) -> List[int]:
        return sorted({c.entrance_lane for c in self.connections})

    @property
    def metric_entry_s(self) -> float:
        """Path position where crossing-time measurement starts (30 m rule)."""
        return self.spec.approach_length - self.spec.metric_boundary


def _rot_left(v: Tuple[float, float]) -> Tuple[float, float]:
    return (-v[1], v[0])


def _rot_right(v: Tuple[float, float]) -> Tuple[float, float]:
    return (v[1], -v[0])


def _exit_approach_for(approach: int, movement: str) -> int:
    # approach indices run clockwise N,E,S,W; headings rotate accordingly
    h = _APPROACH_HEADINGS[approach]
    if movement == STRAIGHT:
        out = h
    elif movement == LEFT:
        out = _rot_left(h)
    else:
        out = _rot_right(h)
    # the exit arm is the one the outbound heading points into
    for a, ha in _APPROACH_HEADINGS.items():
        # exiting north (0,1) leaves through the N arm, whose inbound heading is (0,-1)
        if abs(ha[0] + out[0]) < 1e-9 and abs(ha[1] + out[1]) < 1e-9:
            return a
    raise GeometryError("no exit arm for approach %d movement %s" % (approach, movement))


def _entry_stop_point(spec: IntersectionSpec, approach: int, lane_index: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Stop-line point and inbound heading for an entry lane."""
    h = _APPROACH_HEADINGS[approach]
    r = _rot_right(h)
    off = spec.lane_width * (0.5 + lane_index)
    hx = spec.inner_box_half_extent
    p = (-h[0] * hx + r[0] * off, -h[1] * hx + r[1] * off)
    return p, h


def _exit_box_point(spec: IntersectionSpec, exit_approach: int, lane_index: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Inner-box exit point and outbound heading for an exit lane."""
    h_in = _APPROACH_HEADINGS[exit_approach]
    h_out = (-h_in[0], -h_in[1])
    r = _rot_right(h_out)
    off = spec.lane_width * (0.5 + lane_index)
    hx = spec.inner_box_half_extent
    p = (h_out[0] * hx + r[0] * off, h_out[1] * hx + r[1] * off)
    return p, h_out


def _arc_points(
    p0: Tuple[float, float],
    h0: Tuple[float, float],
    p1: Tuple[float, float],
    h1: Tuple[float, float],
    movement: str,
    max_seg: float,
) -> np.ndarray:
    """Quarter-arc polyline from p0 (heading h0) to p1 (heading h1)."""
    side = _rot_left if movement == LEFT else _rot_right
    n0 = side(h0)
    n1 = side(h1)
    # solve p0 + ra*n0 = p1 + rb*n1 for (ra, rb); lane mapping guarantees ra == rb
    a = np.array([[n0[0], -n1[0]], [n0[1], -n1[1]]])
    b = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    ra, rb = np.linalg.solve(a, b)
    if abs(ra - rb) > 1e-6 or ra <= 0:
        raise GeometryError("inconsistent turn radius: %r vs %r" % (ra, rb))
    radius = float(ra)
    cx, cy = p0[0] + n0[0] * radius, p0[1] + n0[1] * radius
    a0 = math.atan2(p0[1] - cy, p0[0] - cx)
    a1 = math.atan2(p1[1] - cy, p1[0] - cx)
    sweep = a1 - a0
    if movement == LEFT:  # counter-clockwise
        while sweep <= 0:
            sweep += 2 * math.pi
    else:  # clockwise
        while sweep >= 0:
            sweep -= 2 * math.pi
    arc_len = abs(sweep) * radius
    n = max(2, int(math.ceil(arc_len / max_seg)) + 1)
    angles = a0 + sweep * np.linspace(0.0, 1.0, n)
    pts = np.column_stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)])
    pts[0] = p0
    pts[-1] = p1
    return pts


def _build_path(spec: IntersectionSpec, approach: int, lane_index: int, movement: str):
    p_stop, h_in = _entry_stop_point(spec, approach, lane_index)
    exit_approach = _exit_approach_for(approach, movement)
    if movement == STRAIGHT:
        exit_lane_index = lane_index
    elif movement == LEFT:
        exit_lane_index = 0
    else:
        exit_lane_index = 1
    p_exit, h_out = _exit_box_point(spec, exit_approach, exit_lane_index)

    start = (p_stop[0] - h_in[0] * spec.approach_length, p_stop[1] - h_in[1] * spec.approach_length)
    end = (p_exit[0] + h_out[0] * spec.exit_length, p_exit[1] + h_out[1] * spec.exit_length)

    if movement == STRAIGHT:
        pts = np.array([start, p_stop, p_exit, end])
    else:
        arc = _arc_points(p_stop, h_in, p_exit, h_out, movement, spec.arc_segment_max_len)
        pts = np.vstack([np.array([start]), arc, np.array([end])])

    deltas = np.diff(pts, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    stop_s = spec.approach_length
    exit_s = float(cum[-1]) - spec.exit_length
    return pts, cum, exit_approach, exit_lane_index, stop_s, exit_s


def _segment_crossing(p, q, a, b) -> Optional[Tuple[float, float, float]]:
    """Transversal crossing of segments p->q and a->b.

    Returns (t, u, sin_angle) with t, u in [0, 1], or None for parallel,
    collinear, or non-intersecting segments.
    """
    r = (q[0] - p[0], q[1] - p[1])
    s = (b[0] - a[0], b[1] - a[1])
    denom = r[0] * s[1] - r[1] * s[0]
    lr = math.hypot(*r)
    ls = math.hypot(*s)
    if lr <= 0 or ls <= 0:
        return None
    sin_angle = abs(denom) / (lr * ls)
    if sin_angle < 1e-12:
        return None
    qp = (a[0] - p[0], a[1] - p[1])
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    eps = 1e-9
    if -eps <= t <= 1 + eps and -eps <= u <= 1 + eps:
        return (min(max(t, 0.0), 1.0), min(max(u, 0.0), 1.0), sin_angle)
    return None


def _box_segments(conn: Connection, half_extent: float) -> List[int]:
    """Indices of path segments overlapping the inner box (with margin)."""
    m = half_extent + 0.5
    pts = conn.path
    keep = []
    for i in range(len(pts) - 1):
        xs = (pts[i][0], pts[i + 1][0])
        ys = (pts[i][1], pts[i + 1][1])
        if max(xs) < -m or min(xs) > m or max(ys) < -m or min(ys) > m:
            continue
        keep.append(i)
    return keep


def _find_crossings(ca: Connection, cb: Connection, spec: IntersectionSpec):
    """All transversal in-box crossings between two connection paths."""
    hx = spec.inner_box_half_extent
    min_sin = math.sin(math.radians(_MIN_CROSS_ANGLE_DEG))
    hits = []
    segs_a = _box_segments(ca, hx)
    segs_b = _box_segments(cb, hx)
    for i in segs_a:
        p, q = ca.path[i], ca.path[i + 1]
        for j in segs_b:
            a, b = cb.path[j], cb.path[j + 1]
            res = _segment_crossing(p, q, a, b)
            if res is None:
                continue
            t, u, sin_angle = res
            if sin_angle < min_sin:
                continue
            x = p[0] + t * (q[0] - p[0])
            y = p[1] + t * (q[1] - p[1])
            if abs(x) >= hx - 1e-6 or abs(y) >= hx - 1e-6:
                continue
            da = float(ca.cum_len[i] + t * (ca.cum_len[i + 1] - ca.cum_len[i]))
            db = float(cb.cum_len[j] + u * (cb.cum_len[j + 1] - cb.cum_len[j]))
            hits.append((float(x), float(y), da, db))
    # a polyline crossing landing on a vertex can be reported by both adjacent
    # segment pairs; collapse duplicates of the same geometric point
    dedup: List[Tuple[float, float, float, float]] = []
    for h in sorted(hits):
        if any(math.hypot(h[0] - d[0], h[1] - d[1]) < 0.05 for d in dedup):
            continue
        dedup.append(h)
    return dedup


def build_intersection(spec: IntersectionSpec) -> Intersection:
    """Construct connections and conflict points for a validated spec.

    Deterministic: connection ids follow (approach, lane, movement) order and
    conflict point ids follow position order.
    """
    spec.validate()

    raw: List[Connection] = []
    cid = 0
    for approach in range(4):
        for lane_index in range(spec.entry_lanes_per_approach):
            for movement in movements_for_lane(lane_index):
                pts, cum, exit_approach, exit_lane_index, stop_s, exit_s = _build_path(
                    spec, approach, lane_index, movement
                )
                raw.append(
                    Connection(
                        id=cid,
                        entrance_approach=approach,
                        entrance_lane_index=lane_index,
                        exit_approach=exit_approach,
                        exit_lane_index=exit_lane_index,
                        movement=movement,
                        path=pts,
                        cum_len=cum,
                        stop_s=stop_s,
                        exit_s=exit_s,
                    )
                )
                cid += 1

    # pairwise crossings -> clustered conflict points
    clusters: List[dict] = []
    for ia in range(len(raw)):
        for ib in range(ia + 1, len(raw)):
            for x, y, da, db in _find_crossings(raw[ia], raw[ib], spec):
                placed = False
                for cl in clusters:
                    if math.hypot(x - cl["x"], y - cl["y"]) < _CLUSTER_TOL:
                        cl["members"].append((ia, da))
                        cl["members"].append((ib, db))
                        placed = True
                        break
                if not placed:
                    clusters.append({"x": x, "y": y, "members": [(ia, da), (ib, db)]})

    clusters.sort(key=lambda cl: (round(cl["x"], 4), round(cl["y"], 4)))
    points: List[ConflictPoint] = []
    per_conn: Dict[int, List[Tuple[float, int]]] = {c.id: [] for c in raw}
    for pid, cl in enumerate(clusters):
        dists: Dict[int, List[float]] = {}
        for conn_idx, d in cl["members"]:
            dists.setdefault(conn_idx, []).append(d)
        mean_d = {k: float(np.mean(v)) for k, v in dists.items()}
        points.append(
            ConflictPoint(
                id=pid,
                position=(cl["x"], cl["y"]),
                involved_connections=frozenset(mean_d.keys()),
                distance_along=mean_d,
            )
        )
        for conn_idx, d in mean_d.items():
            per_conn[conn_idx].append((d, pid))

    connections = []
    for c in raw:
        entries = sorted(per_conn[c.id])
        connections.append(
            Connection(
                id=c.id,
                entrance_approach=c.entrance_approach,
                entrance_lane_index=c.entrance_lane_index,
                exit_approach=c.exit_approach,
                exit_lane_index=c.exit_lane_index,
                movement=c.movement,
                path=c.path,
                cum_len=c.cum_len,
                stop_s=c.stop_s,
                exit_s=c.exit_s,
                conflict_point_ids=tuple(pid for _, pid in entries),
                conflict_distances=tuple(d for d, _ in entries),
            )
        )

    return Intersection(spec=spec, connections=tuple(connections), conflict_points=tuple(points))


def locate(position: float, connection: Connection, spec: IntersectionSpec) -> str:
    """Zone of a path position: outside -> optimization_area -> crossing_zone -> departed."""
    outer_s = connection.stop_s - spec.optimization_zone_depth
    if position < outer_s:
        return ZONE_OUTSIDE
    if position < connection.stop_s:
        return ZONE_OPTIMIZATION
    if position < connection.exit_s:
        return ZONE_CROSSING
    return ZONE_DEPARTED
