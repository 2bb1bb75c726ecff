"""Discrete-time microscopic world: spawning, kinematics, collisions, fuel.

The world advances in fixed 0.2 s steps. Human-driven vehicles follow the
car-following model; connected autonomous vehicles apply externally supplied
per-step speed changes. Controllers may additionally hold vehicles at the stop
line (virtual standing obstacle), which is how signal-style baselines act on
human drivers.

Positions are arc lengths along a connection path and refer to the front
bumper. Within a shared corridor (entrance lane, connection, exit lane) the
simulator caps commanded speed changes with a follow-safety envelope so that
rear-end and merge interactions are resolved by car-following; crossing
interactions inside the box are deliberately left to the controllers.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .geometry import (
    ZONE_CROSSING,
    ZONE_DEPARTED,
    ZONE_OPTIMIZATION,
    ZONE_OUTSIDE,
    Intersection,
    locate,
)
from .idm import ACCEL_MAX, DECEL_MAX, IdmParams, idm_accel

EVENT_SCHEMA = 1

CAV = "cav"
HV = "hv"

# instantaneous fuel model, ml/s: idle floor plus a cubic speed polynomial and
# a traction term active only while accelerating
FUEL_IDLE = 0.25
FUEL_C0 = 0.25
FUEL_C1 = 0.012
FUEL_C2 = 8.0e-4
FUEL_C3 = 5.0e-5
FUEL_C4 = 0.11


class InvariantViolation(RuntimeError):
    """A kinematic bound was broken; indicates a controller or sim bug."""


def fuel_rate(v: float, a: float) -> float:
    """Fuel burn in ml/s at speed v (m/s) and acceleration a (m/s^2)."""
    f = FUEL_C0 + FUEL_C1 * v + FUEL_C2 * v * v + FUEL_C3 * v ** 3 + FUEL_C4 * max(a, 0.0) * v
    return max(FUEL_IDLE, f)


@dataclass
class Vehicle:
    id: int
    kind: str  # CAV or HV
    connection_id: int
    s: float  # front-bumper arc position along the connection path
    v: float
    length: float = 5.0
    width: float = 1.8
    spawn_time: float = 0.0
    entered_metric_zone_at: Optional[float] = None
    departed_at: Optional[float] = None
    fuel_used: float = 0.0
    last_dv: float = 0.0

    @property
    def is_cav(self) -> bool:
        return self.kind == CAV


@dataclass
class WorldConfig:
    flow_rate: float = 450.0  # veh/lane/h
    hv_fraction: float = 0.8  # probability that a spawn is human-driven
    seed: int = 0
    sim_dt: float = 0.2
    v_max: float = 15.0
    v_min: float = 0.0
    vehicle_length: float = 5.0
    vehicle_width: float = 1.8
    idm: IdmParams = field(default_factory=IdmParams)
    rear_guard: bool = True  # cap CAV commands with the follow-safety envelope
    merge_lookahead: float = 30.0  # how far before a shared exit lane merging starts
    spawn_speed: Optional[float] = None  # default: idm.v0
    spawn_lanes: Optional[Tuple[int, ...]] = None  # default: all entry lanes

    def validate(self) -> None:
        if self.flow_rate <= 0:
            raise ValueError("flow_rate must be positive")
        if not (0.0 <= self.hv_fraction <= 1.0):
            raise ValueError("hv_fraction must lie in [0, 1]")
        if self.sim_dt <= 0:
            raise ValueError("sim_dt must be positive")
        if self.v_max <= 0 or self.v_min < 0 or self.v_min >= self.v_max:
            raise ValueError("need 0 <= v_min < v_max")
        self.idm.validate()


class World:
    """Single intersection world with Poisson arrivals per entry lane."""

    def __init__(self, intersection: Intersection, config: WorldConfig):
        config.validate()
        self.intersection = intersection
        self.config = config
        self.time = 0.0
        self.step_index = 0
        self.vehicles: Dict[int, Vehicle] = {}
        self.events: List[dict] = []
        self.rng = np.random.default_rng(config.seed)
        self._next_id = 0
        self._active_contacts: Set[Tuple[int, int]] = set()
        self._collision_count = 0
        lanes = intersection.entry_lanes
        if config.spawn_lanes is not None:
            lanes = [l for l in lanes if l in config.spawn_lanes]
        self._pending: Dict[int, deque] = {lane: deque() for lane in intersection.entry_lanes}
        self._next_arrival: Dict[int, float] = {
            lane: float(self.rng.exponential(self._mean_headway())) for lane in lanes
        }

    # ------------------------------------------------------------------ setup

    def _mean_headway(self) -> float:
        return 3600.0 / self.config.flow_rate

    def _emit(self, event: str, **fields) -> dict:
        rec = {"event": event, "step": self.step_index, "time": round(self.time, 6)}
        rec.update(fields)
        self.events.append(rec)
        return rec

    def connection_of(self, vehicle: Vehicle):
        return self.intersection.connections[vehicle.connection_id]

    def zone_of(self, vehicle: Vehicle) -> str:
        return locate(vehicle.s, self.connection_of(vehicle), self.intersection.spec)

    # ---------------------------------------------------------------- arrivals

    def _sample_arrival(self, lane: int) -> Tuple[str, int]:
        kind = HV if self.rng.random() < self.config.hv_fraction else CAV
        options = [c.id for c in self.intersection.connections_on_entrance_lane(lane)]
        connection_id = int(options[int(self.rng.integers(0, len(options)))])
        return kind, connection_id

    def _generate_arrivals(self) -> None:
        for lane in sorted(self._next_arrival):
            while self._next_arrival[lane] <= self.time:
                self._pending[lane].append(self._sample_arrival(lane))
                self._next_arrival[lane] += float(self.rng.exponential(self._mean_headway()))

    def _entry_blocked(self, lane: int) -> bool:
        """Entry is blocked while a spawn at v0 would need emergency braking."""
        cfg = self.config
        v0 = cfg.spawn_speed if cfg.spawn_speed is not None else cfg.idm.v0
        nearest = None
        for c in self.intersection.connections_on_entrance_lane(lane):
            for veh in self.vehicles.values():
                if veh.connection_id != c.id:
                    continue
                if veh.s <= self.connection_of(veh).stop_s + veh.length:
                    if nearest is None or veh.s < nearest.s:
                        nearest = veh
        if nearest is None:
            return False
        if nearest.s < cfg.idm.s0 + cfg.vehicle_length:
            return True
        gap = nearest.s - nearest.length
        return idm_accel(v0, gap, nearest.v, cfg.idm) < -cfg.idm.b

    def spawn(self, lane: int, kind: Optional[str] = None, connection_id: Optional[int] = None) -> Optional[Vehicle]:
        """Queue an arrival on a lane and place it if the entry is free.

        Returns the vehicle if it entered immediately, else None (deferred;
        the queued arrival is placed on the first free step, none are lost).
        """
        if kind is None or connection_id is None:
            k, c = self._sample_arrival(lane)
            kind = kind if kind is not None else k
            connection_id = connection_id if connection_id is not None else c
        self._pending[lane].append((kind, connection_id))
        placed = self._place_pending(lane)
        return placed

    def _place_pending(self, lane: int) -> Optional[Vehicle]:
        last = None
        while self._pending[lane] and not self._entry_blocked(lane):
            kind, connection_id = self._pending[lane].popleft()
            cfg = self.config
            v0 = cfg.spawn_speed if cfg.spawn_speed is not None else cfg.idm.v0
            veh = Vehicle(
                id=self._next_id,
                kind=kind,
                connection_id=connection_id,
                s=0.0,
                v=min(v0, cfg.v_max),
                length=cfg.vehicle_length,
                width=cfg.vehicle_width,
                spawn_time=self.time,
            )
            self._next_id += 1
            self.vehicles[veh.id] = veh
            self._emit("spawn", vehicle=veh.id, kind=kind, connection=connection_id, lane=lane)
            last = veh
        return last

    @property
    def pending_count(self) -> int:
        return sum(len(q) for q in self._pending.values())

    # ---------------------------------------------------------------- corridors

    def _corridors(self):
        """Sorted occupancy of shared corridors for follow-constraint lookup."""
        by_entry: Dict[int, List[Tuple[float, int]]] = {}
        by_conn: Dict[int, List[Tuple[float, int]]] = {}
        by_exit: Dict[int, List[Tuple[float, int, bool]]] = {}
        lookahead = self.config.merge_lookahead
        for veh in self.vehicles.values():
            conn = self.connection_of(veh)
            by_conn.setdefault(veh.connection_id, []).append((veh.s, veh.id))
            # stay visible to same-lane followers until well clear of the
            # diverge region past the stop line
            if veh.s <= conn.stop_s + veh.length + 4.0:
                by_entry.setdefault(conn.entrance_lane, []).append((veh.s, veh.id))
            if veh.s >= conn.exit_s - lookahead:
                committed = veh.s >= conn.stop_s
                by_exit.setdefault(conn.exit_lane, []).append(
                    (veh.s - conn.exit_s, veh.id, committed)
                )
        for group in (by_entry, by_conn, by_exit):
            for rows in group.values():
                rows.sort()
        return by_entry, by_conn, by_exit

    def follow_constraints(self, vehicle: Vehicle, corridors=None) -> List[Tuple[float, float]]:
        """(gap, leader speed) constraints from every shared corridor.

        Same-connection and same-entrance-lane vehicles ahead act as ordinary
        leaders. On a shared exit lane, merge priority belongs to committed
        vehicles (past their stop line): a committed vehicle yields only to
        committed traffic ahead of it, while a vehicle still upstream waits at
        its stop line whenever a committed merge-mate has not yet cleared the
        stretch it is about to enter.
        """
        if corridors is None:
            corridors = self._corridors()
        by_entry, by_conn, by_exit = corridors
        conn = self.connection_of(vehicle)
        out: List[Tuple[float, float]] = []

        def ahead_of(rows, progress):
            for row in rows:
                p, vid = row[0], row[1]
                if vid == vehicle.id or p <= progress:
                    continue
                other = self.vehicles[vid]
                return p - other.length - progress, other.v
            return None

        hit = ahead_of(by_conn.get(vehicle.connection_id, []), vehicle.s)
        if hit is not None:
            out.append(hit)
        if vehicle.s <= conn.stop_s + vehicle.length:
            hit = ahead_of(by_entry.get(conn.entrance_lane, []), vehicle.s)
            if hit is not None:
                out.append(hit)

        if vehicle.s >= conn.exit_s - self.config.merge_lookahead:
            rows = by_exit.get(conn.exit_lane, [])
            progress = vehicle.s - conn.exit_s
            if vehicle.s >= conn.stop_s:
                # committed: follow the nearest committed vehicle ahead; paths
                # from another connection converge diagonally, so keep extra
                # clearance until the lateral offset is gone
                best = None
                for p, vid, committed in rows:
                    if vid == vehicle.id or not committed or p <= progress:
                        continue
                    other = self.vehicles[vid]
                    gap = p - other.length - progress
                    if other.connection_id != vehicle.connection_id:
                        gap -= 2.5
                    if best is None or gap < best[0]:
                        best = (gap, other.v)
                if best is not None:
                    out.append(best)
            else:
                entry_progress = -(conn.exit_s - conn.stop_s)
                clear_margin = 2.0 * vehicle.length
                blocked = False
                best = None
                for p, vid, committed in rows:
                    if vid == vehicle.id:
                        continue
                    other = self.vehicles[vid]
                    if committed:
                        if p < entry_progress + clear_margin:
                            blocked = True
                            break
                        gap = p - other.length - progress
                        if best is None or gap < best[0]:
                            best = (gap, other.v)
                    elif other.connection_id != vehicle.connection_id and (
                        (p, vid) > (progress, vehicle.id)
                    ):
                        # zipper order among not-yet-committed merge-mates:
                        # the one farther from the merge trails the other
                        gap = p - other.length - progress - 2.5
                        if best is None or gap < best[0]:
                            best = (gap, other.v)
                if blocked:
                    # wait at the stop line until the box-side merge clears
                    out.append((max(conn.stop_s - vehicle.s, 1e-6), 0.0))
                elif best is not None:
                    out.append(best)
        return out

    # ------------------------------------------------------------------- step

    def _follow_cap(self, vehicle: Vehicle, constraints: List[Tuple[float, float]]) -> float:
        """Safety envelope for commanded vehicles: interaction-only braking."""
        cap = ACCEL_MAX
        p = self.config.idm
        for gap, lead_v in constraints:
            if gap <= 0.0:
                return DECEL_MAX
            dv = vehicle.v - lead_v
            s_star = p.s0 + vehicle.v * p.T + vehicle.v * dv / (2.0 * math.sqrt(p.a_max * p.b))
            a = p.a_max * (1.0 - max(s_star, 0.0) / gap)
            cap = min(cap, a)
        return min(max(cap, DECEL_MAX), ACCEL_MAX)

    def step(self, control: Optional[Dict[int, float]] = None, hold_ids: Optional[Set[int]] = None) -> List[dict]:
        """Advance one step; returns events emitted during it.

        control maps CAV id -> per-step speed change (m/s); vehicles without a
        command (and all HVs) follow the car-following model. hold_ids are
        braked to a stop at their stop line while still on the approach.
        """
        cfg = self.config
        dt = cfg.sim_dt
        control = control or {}
        hold_ids = hold_ids or set()
        start = len(self.events)

        self._generate_arrivals()
        for lane in sorted(self._pending):
            self._place_pending(lane)

        corridors = self._corridors()
        zones_before = {vid: self.zone_of(v) for vid, v in self.vehicles.items()}

        departed: List[int] = []
        for vid in sorted(self.vehicles):
            veh = self.vehicles[vid]
            conn = self.connection_of(veh)
            constraints = self.follow_constraints(veh, corridors)

            idm_dv = min(
                (idm_accel(veh.v, gap, lead_v, cfg.idm) for gap, lead_v in constraints),
                default=idm_accel(veh.v, None, None, cfg.idm),
            ) * dt
            # a held vehicle brakes for the stop line; one that breached the
            # line slowly is pinned to a stop rather than creeping onward
            held = vid in hold_ids and (
                veh.s < conn.stop_s
                or (veh.s < conn.stop_s + 0.5 and veh.v <= 2.0)
            )
            if held:
                stop_gap = conn.stop_s - veh.s
                if stop_gap > 0.0:
                    hold_dv = idm_accel(veh.v, stop_gap, 0.0, cfg.idm) * dt
                    # brake as hard as the geometry demands, not just as the
                    # comfort model suggests (late holds must still stop)
                    if veh.v > 0.0:
                        required = -(veh.v * veh.v) / (2.0 * max(stop_gap - 1.0, 0.1))
                        if required <= -2.0:
                            hold_dv = min(hold_dv, max(required, DECEL_MAX) * dt)
                else:
                    hold_dv = -veh.v
                idm_dv = min(idm_dv, hold_dv)

            if vid in control and veh.is_cav:
                dv = float(control[vid])
                if held:
                    dv = min(dv, idm_dv)
                elif cfg.rear_guard:
                    dv = min(dv, self._follow_cap(veh, constraints) * dt)
            else:
                dv = idm_dv

            dv = min(max(dv, DECEL_MAX * dt), ACCEL_MAX * dt)
            dv = min(max(dv, cfg.v_min - veh.v), cfg.v_max - veh.v)

            if not (DECEL_MAX * dt - 1e-9 <= dv <= ACCEL_MAX * dt + 1e-9):
                raise InvariantViolation("dv %.6f outside envelope for vehicle %d" % (dv, vid))

            new_v = veh.v + dv
            if not (cfg.v_min - 1e-9 <= new_v <= cfg.v_max + 1e-9):
                raise InvariantViolation("speed %.6f outside [%s, %s]" % (new_v, cfg.v_min, cfg.v_max))
            new_v = min(max(new_v, cfg.v_min), cfg.v_max)
            new_s = veh.s + new_v * dt
            if new_s < veh.s - 1e-12:
                raise InvariantViolation("vehicle %d moved backward" % vid)

            veh.last_dv = dv
            veh.v = new_v
            veh.s = min(new_s, conn.length)
            veh.fuel_used += fuel_rate(new_v, dv / dt) * dt

        self.time += dt
        self.step_index += 1

        metric_s = self.intersection.metric_entry_s
        for vid in sorted(self.vehicles):
            veh = self.vehicles[vid]
            conn = self.connection_of(veh)
            if veh.entered_metric_zone_at is None and veh.s >= metric_s:
                veh.entered_metric_zone_at = self.time
                self._emit("metric_zone_entry", vehicle=vid)
            zone_now = self.zone_of(veh)
            if zone_now != zones_before.get(vid, zone_now):
                self._emit("zone", vehicle=vid, zone=zone_now)
            if veh.s - veh.length >= conn.exit_s:
                veh.departed_at = self.time
                t_cross = (
                    self.time - veh.entered_metric_zone_at
                    if veh.entered_metric_zone_at is not None
                    else None
                )
                self._emit(
                    "departure",
                    vehicle=vid,
                    kind=veh.kind,
                    t_cross=None if t_cross is None else round(t_cross, 6),
                    fuel=round(veh.fuel_used, 6),
                )
                departed.append(vid)
        for vid in departed:
            del self.vehicles[vid]

        pairs = detect_collisions(self)
        for pair in sorted(pairs):
            if pair not in self._active_contacts:
                self._collision_count += 1
                self._emit("collision", pair=list(pair))
        self._active_contacts = pairs

        return self.events[start:]

    @property
    def collision_count(self) -> int:
        return self._collision_count

    def write_events_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema_version": EVENT_SCHEMA}) + "\n")
            for rec in self.events:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_events_jsonl(path: str) -> List[dict]:
    out = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != EVENT_SCHEMA:
            raise ValueError("unsupported event schema: %r" % (header,))
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


# ------------------------------------------------------------------ collisions


def _footprints(world: World, vehicles: Sequence[Vehicle]):
    """Vectorized (center, axis, half_len, half_wid) per vehicle."""
    n = len(vehicles)
    fronts = np.empty((n, 2))
    rears = np.empty((n, 2))
    by_conn: Dict[int, List[int]] = {}
    for idx, veh in enumerate(vehicles):
        by_conn.setdefault(veh.connection_id, []).append(idx)
    for cid, idxs in by_conn.items():
        conn = world.intersection.connections[cid]
        s = np.array([vehicles[i].s for i in idxs])
        s_rear = np.maximum(s - np.array([vehicles[i].length for i in idxs]), 0.0)
        fronts[idxs, 0] = np.interp(s, conn.cum_len, conn.path[:, 0])
        fronts[idxs, 1] = np.interp(s, conn.cum_len, conn.path[:, 1])
        rears[idxs, 0] = np.interp(s_rear, conn.cum_len, conn.path[:, 0])
        rears[idxs, 1] = np.interp(s_rear, conn.cum_len, conn.path[:, 1])
    axes = fronts - rears
    norms = np.hypot(axes[:, 0], axes[:, 1])
    norms = np.where(norms < 1e-9, 1.0, norms)
    axes = axes / norms[:, None]
    centers = (fronts + rears) / 2.0
    return [
        (centers[i], axes[i], vehicles[i].length / 2.0, vehicles[i].width / 2.0)
        for i in range(n)
    ]


def _obb_overlap(c1, a1, hl1, hw1, c2, a2, hl2, hw2) -> bool:
    axes = [
        a1,
        np.array([-a1[1], a1[0]]),
        a2,
        np.array([-a2[1], a2[0]]),
    ]
    d = c2 - c1
    for ax in axes:
        r1 = hl1 * abs(float(np.dot(ax, a1))) + hw1 * abs(float(np.dot(ax, np.array([-a1[1], a1[0]]))))
        r2 = hl2 * abs(float(np.dot(ax, a2))) + hw2 * abs(float(np.dot(ax, np.array([-a2[1], a2[0]]))))
        if abs(float(np.dot(ax, d))) > r1 + r2:
            return False
    return True


def detect_collisions(world: World) -> Set[Tuple[int, int]]:
    """Pairs of vehicles whose oriented footprints overlap right now."""
    vehicles = sorted(world.vehicles.values(), key=lambda v: v.id)
    if len(vehicles) < 2:
        return set()
    feats = _footprints(world, vehicles)
    centers = np.array([f[0] for f in feats])
    diag = max(math.hypot(v.length, v.width) for v in vehicles)
    dx = centers[:, 0][:, None] - centers[:, 0][None, :]
    dy = centers[:, 1][:, None] - centers[:, 1][None, :]
    close = (dx * dx + dy * dy) <= diag * diag
    ii, jj = np.where(np.triu(close, k=1))
    out: Set[Tuple[int, int]] = set()
    for i, j in zip(ii.tolist(), jj.tolist()):
        c1, a1, hl1, hw1 = feats[i]
        c2, a2, hl2, hw2 = feats[j]
        if _obb_overlap(c1, a1, hl1, hw1, c2, a2, hl2, hw2):
            out.add((vehicles[i].id, vehicles[j].id))
    return out
