"""Comparison controllers sharing the simulator: fixed-time and longest-queue
signals, first-come-first-serve virtual traffic lights (single vehicle and
platoon), and glue for the learned controllers.

Rule controllers act through the simulator's hold mechanism: vehicles denied
passage are braked to a stop at their stop line, everything else drives by
car-following. The FCFS family books conflict-point time windows from a
kinematic projection (free road, full acceleration toward the desired speed)
with a safety margin on both sides; bookings follow arrival order, denied
vehicles shield their requested windows so later arrivals cannot overtake
them in the queue, and a granted vehicle that can no longer make its window
is revoked and re-queued while still upstream of the stop line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .geometry import LEFT, RIGHT, STRAIGHT, ZONE_CROSSING, ZONE_OPTIMIZATION, Intersection, locate
from .idm import IdmParams, idm_accel
from .sim import World

CONTROLLER_NAMES = (
    "fixed_time",
    "lqf",
    "fcfs_vtl",
    "fcfs_platoon",
    "flat_sac",
    "harl",
)


# ------------------------------------------------------------------ phase plans


@dataclass(frozen=True)
class PhasePlan:
    phases: Tuple[frozenset, ...]  # permitted connection ids per phase
    green: float
    yellow: float

    @property
    def cycle(self) -> float:
        return len(self.phases) * (self.green + self.yellow)


def build_phase_plan(intersection: Intersection, cycle: float = 120.0, yellow: float = 3.0) -> PhasePlan:
    """Four phases: NS through+right, NS left, EW through+right, EW left.

    Green time splits the cycle equally after subtracting the yellows. The
    plan is validated to be conflict-free within each phase.
    """

    def pick(approaches, movements):
        return frozenset(
            c.id
            for c in intersection.connections
            if c.entrance_approach in approaches and c.movement in movements
        )

    phases = (
        pick((0, 2), (STRAIGHT, RIGHT)),
        pick((0, 2), (LEFT,)),
        pick((1, 3), (STRAIGHT, RIGHT)),
        pick((1, 3), (LEFT,)),
    )
    green = (cycle - len(phases) * yellow) / len(phases)
    if green <= 0:
        raise ValueError("cycle too short for %d phases with %.1fs yellow" % (len(phases), yellow))
    plan = PhasePlan(phases, green, yellow)
    validate_phase_plan(intersection, plan)
    return plan


def validate_phase_plan(intersection: Intersection, plan: PhasePlan) -> None:
    for i, phase in enumerate(plan.phases):
        for p in intersection.conflict_points:
            if len(p.involved_connections & phase) >= 2:
                raise ValueError(
                    "phase %d permits connections %s sharing conflict point %d"
                    % (i, sorted(p.involved_connections & phase), p.id)
                )


def _comfortable_stop_possible(v: float, dist: float, b: float = 3.5) -> bool:
    return dist > v * v / (2.0 * b) + 2.0


class FixedTimeController:
    """Pre-timed round-robin phases; red approaches stop at the line."""

    name = "fixed_time"

    def __init__(self, intersection: Intersection, plan: Optional[PhasePlan] = None):
        self.intersection = intersection
        self.plan = plan or build_phase_plan(intersection)

    def phase_at(self, t: float) -> Tuple[int, bool]:
        """(phase index, is_yellow) at absolute time t."""
        plan = self.plan
        slot = plan.green + plan.yellow
        pos = t % plan.cycle
        idx = int(pos // slot)
        return idx, (pos - idx * slot) >= plan.green

    def act(self, world: World) -> Tuple[Dict[int, float], Set[int]]:
        idx, is_yellow = self.phase_at(world.time)
        permitted = self.plan.phases[idx]
        hold: Set[int] = set()
        for vid in sorted(world.vehicles):
            veh = world.vehicles[vid]
            conn = world.intersection.connections[veh.connection_id]
            if veh.s >= conn.stop_s + 0.5:
                continue  # committed; let it clear
            if veh.connection_id not in permitted:
                hold.add(vid)
            elif is_yellow and _comfortable_stop_possible(veh.v, conn.stop_s - veh.s):
                hold.add(vid)
        return {}, hold


class LqfController:
    """Longest-queue-first: after min_green, serve the phase with the most
    queued vehicles; intersection-granularity conflicts, lowest index wins ties."""

    name = "lqf"

    def __init__(
        self,
        intersection: Intersection,
        plan: Optional[PhasePlan] = None,
        min_green: float = 5.0,
        queue_speed: float = 0.5,
    ):
        self.intersection = intersection
        self.plan = plan or build_phase_plan(intersection)
        self.min_green = min_green
        self.queue_speed = queue_speed
        self.current = 0
        self.green_since = 0.0
        self.yellow_until: Optional[float] = None
        self.pending: Optional[int] = None

    def queue_counts(self, world: World) -> List[int]:
        counts = [0] * len(self.plan.phases)
        for veh in world.vehicles.values():
            if veh.v >= self.queue_speed:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if locate(veh.s, conn, world.intersection.spec) != ZONE_OPTIMIZATION:
                continue
            for i, phase in enumerate(self.plan.phases):
                if veh.connection_id in phase:
                    counts[i] += 1
        return counts

    def act(self, world: World) -> Tuple[Dict[int, float], Set[int]]:
        t = world.time
        if self.yellow_until is not None:
            if t >= self.yellow_until:
                self.current = self.pending
                self.pending = None
                self.yellow_until = None
                self.green_since = t
            else:
                # transition: clear the box; upstream vehicles that can still
                # stop comfortably wait, committed ones pass through
                hold = set()
                for vid in sorted(world.vehicles):
                    veh = world.vehicles[vid]
                    conn = world.intersection.connections[veh.connection_id]
                    if veh.s < conn.stop_s and _comfortable_stop_possible(
                        veh.v, conn.stop_s - veh.s
                    ):
                        hold.add(vid)
                    elif conn.stop_s <= veh.s < conn.stop_s + 0.5 and veh.v <= 2.0:
                        hold.add(vid)
                return {}, hold

        if t - self.green_since >= self.min_green:
            counts = self.queue_counts(world)
            best = max(range(len(counts)), key=lambda i: (counts[i], -i))
            if counts[best] > 0 and best != self.current:
                self.pending = best
                self.yellow_until = t + self.plan.yellow

        permitted = self.plan.phases[self.current]
        hold: Set[int] = set()
        for vid in sorted(world.vehicles):
            veh = world.vehicles[vid]
            if veh.connection_id not in permitted:
                conn = world.intersection.connections[veh.connection_id]
                if veh.s < conn.stop_s + 0.5:
                    hold.add(vid)
        return {}, hold


# ---------------------------------------------------------------- fcfs family


class _LaunchProfile:
    """Canonical free-road kinematics: time/position along an acceleration run
    from standstill toward the desired speed, for projecting crossing times."""

    def __init__(self, idm: IdmParams, dt: float = 0.05, horizon: float = 240.0):
        n = int(horizon / dt)
        v = 0.0
        t = np.empty(n)
        x = np.empty(n)
        vs = np.empty(n)
        xx = 0.0
        for i in range(n):
            t[i] = i * dt
            x[i] = xx
            vs[i] = v
            a = idm.a_max * (1.0 - v / idm.v0)
            v = min(v + a * dt, idm.v0 - 1e-9)
            xx += v * dt
        self.t = t
        self.x = x
        self.v = vs

    def time_to_cover(self, v0: float, dist: float) -> float:
        """Seconds to travel dist starting at speed v0, accelerating freely."""
        if dist <= 0.0:
            return 0.0
        t0 = float(np.interp(min(v0, self.v[-1]), self.v, self.t))
        x0 = float(np.interp(t0, self.t, self.x))
        target = x0 + dist
        if target >= self.x[-1]:
            # beyond the table: cruising at the desired speed
            return float(self.t[-1] - t0 + (target - self.x[-1]) / max(self.v[-1], 1e-9))
        return float(np.interp(target, self.x, self.t) - t0)


class FcfsVtlController:
    """First-come-first-serve conflict-point booking with virtual lights."""

    name = "fcfs_vtl"

    def __init__(
        self,
        intersection: Intersection,
        idm: Optional[IdmParams] = None,
        margin: float = 2.0,
        rerequest_period: float = 1.0,
    ):
        self.intersection = intersection
        self.idm = idm or IdmParams()
        self.margin = margin
        self.rerequest_period = rerequest_period
        self.profile = _LaunchProfile(self.idm)
        self.arrival_rank: Dict[int, int] = {}
        self.conn_of: Dict[int, int] = {}
        self._next_rank = 0
        self.granted: Dict[int, Dict[int, Tuple[float, float]]] = {}
        self.grant_time: Dict[int, float] = {}
        self.locks: Dict[int, List[Tuple[float, float, int]]] = {
            p.id: [] for p in intersection.conflict_points
        }
        self._last_request_t = -1e9
        self._moving_since: Dict[int, float] = {}
        self.stuck_revoke_after = 4.0  # s a granted vehicle may sit still upstream

    # -------------------------------------------------------------- bookkeeping

    def _register_arrivals(self, world: World) -> None:
        for vid in sorted(world.vehicles):
            if vid in self.arrival_rank:
                continue
            veh = world.vehicles[vid]
            conn = world.intersection.connections[veh.connection_id]
            zone = locate(veh.s, conn, world.intersection.spec)
            if zone in (ZONE_OPTIMIZATION, ZONE_CROSSING):
                self.arrival_rank[vid] = self._next_rank
                self.conn_of[vid] = veh.connection_id
                self._next_rank += 1

    def _cleanup(self, world: World) -> None:
        present = set(world.vehicles)
        gone = [vid for vid in self.granted if vid not in present]
        for vid in gone:
            self._release(vid)
        for vid in [v for v in self._moving_since if v not in present]:
            del self._moving_since[vid]
        for pid in self.locks:
            self.locks[pid] = [
                (a, b, vid) for a, b, vid in self.locks[pid] if b >= world.time - 5.0 and vid in self.granted
            ]

    def _release(self, vid: int) -> None:
        self.granted.pop(vid, None)
        for pid in self.locks:
            self.locks[pid] = [row for row in self.locks[pid] if row[2] != vid]

    FOLLOW_LAG = 2.0  # seconds a follower trails its leader at each point

    def _project(self, world: World, veh, chain: bool = True) -> List[Tuple[int, float, float]]:
        """(point id, t_enter, t_exit) absolute times for remaining points.

        Window starts come from free-road launch kinematics (the earliest
        physically possible arrival). Window ends are pessimistic: once past
        the stop line the vehicle may be forced down to a crawl by merge
        queues, so the exit time covers crossing the box at the crawl floor.
        The block shifts later when the immediate same-connection leader
        holds later windows (the follower physically trails it).
        """
        conn = world.intersection.connections[veh.connection_id]
        t = world.time
        if veh.s >= conn.stop_s:
            t_line = t
            line_s = veh.s
        else:
            t_line = t + self.profile.time_to_cover(veh.v, conn.stop_s - veh.s)
            line_s = conn.stop_s
        out = []
        for pid, d in zip(conn.conflict_point_ids, conn.conflict_distances):
            if d < veh.s:
                continue
            t_in = t + self.profile.time_to_cover(veh.v, d - veh.s)
            t_out = t + self.profile.time_to_cover(veh.v, d - veh.s + veh.length)
            t_out_pess = t_line + (d - line_s + veh.length) / self.PESSIMISTIC_FLOOR
            out.append((pid, t_in, max(t_out, t_out_pess)))
        if chain and out:
            out = self._chain_slots(out, self._leader_windows(world, veh))
        return out

    def _leader_windows(self, world: World, veh) -> Optional[Dict[int, Tuple[float, float]]]:
        leader = None
        for other in world.vehicles.values():
            if other.id == veh.id or other.connection_id != veh.connection_id:
                continue
            if other.s > veh.s and (leader is None or other.s < leader.s):
                leader = other
        if leader is None:
            return None
        return self.granted.get(leader.id)

    def _chain_slots(self, slots, leader_windows):
        if not leader_windows:
            return slots
        shift = 0.0
        for pid, t_in, _ in slots:
            if pid in leader_windows:
                shift = max(shift, leader_windows[pid][0] + self.FOLLOW_LAG - t_in)
        if shift <= 0.0:
            return slots
        return [(pid, t_in + shift, t_out + shift) for pid, t_in, t_out in slots]

    def _windows(self, slots, extra_locks, ignore_vid: Optional[int] = None,
                 requester_conn: Optional[int] = None) -> bool:
        """True when every (pid, t_in, t_out) window is free of locks.

        Locks held by vehicles on the requester's own connection never block:
        same-lane ordering is handled by car-following, not by the bookings.
        """
        m = self.margin
        for pid, t_in, t_out in slots:
            lo, hi = t_in - m, t_out + m
            for a, b, vid in self.locks[pid]:
                if vid == ignore_vid:
                    continue
                if requester_conn is not None and self.conn_of.get(vid) == requester_conn:
                    continue
                if lo < b and a < hi:
                    return False
            for a, b in extra_locks.get(pid, ()):  # denied predecessors' shields
                if lo < b and a < hi:
                    return False
        return True

    def _book(self, vid: int, slots, t: float) -> None:
        m = self.margin
        grant = {}
        for pid, t_in, t_out in slots:
            self.locks[pid].append((t_in - m, t_out + m, vid))
            grant[pid] = (t_in, t_out)
        self.granted[vid] = grant
        self.grant_time.setdefault(vid, t)

    def _shield(self, extra_locks, slots) -> None:
        m = self.margin
        for pid, t_in, t_out in slots:
            extra_locks.setdefault(pid, []).append((t_in - m, t_out + m))

    PESSIMISTIC_FLOOR = 1.5  # m/s a committed vehicle might slow to

    def _refresh_committed(self, world: World) -> None:
        """Vehicles past the line have right of way; their windows track
        current kinematics every step so approaching traffic yields to
        reality, not to a stale projection."""
        for vid in sorted(self.granted, key=lambda v: self.arrival_rank.get(v, 1 << 30)):
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if veh.s < conn.stop_s:
                continue
            slots = self._project(world, veh)
            if slots:
                self._release(vid)
                self._book(vid, slots, world.time)

    def _revalidate(self, world: World) -> None:
        """Vehicles still upstream are re-checked against the live locks and
        revoked if they no longer fit -- a grant is only final once the
        vehicle crosses the stop line. A grant that sits motionless upstream
        (stuck behind denied traffic) is returned to the queue so its stale
        locks cannot wedge the whole junction."""
        for vid in sorted(self.granted, key=lambda v: self.arrival_rank.get(v, 1 << 30)):
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if veh.s >= conn.stop_s:
                continue
            if world.time - self._moving_since.get(vid, world.time) > self.stuck_revoke_after:
                self._release(vid)
                continue
            slots = self._project(world, veh)
            if slots and not self._windows(
                slots, {}, ignore_vid=vid, requester_conn=self.conn_of.get(vid)
            ):
                self._release(vid)

    # --------------------------------------------------------------------- act

    def _clear_run_to_line(self, world: World, veh) -> bool:
        """No ungranted vehicle between this one and its stop line."""
        conn = world.intersection.connections[veh.connection_id]
        for other in world.vehicles.values():
            if other.id == veh.id or other.id in self.granted:
                continue
            oc = world.intersection.connections[other.connection_id]
            if oc.entrance_lane != conn.entrance_lane:
                continue
            if veh.s < other.s <= oc.stop_s + other.length:
                return False
        return True

    def _grant_round(self, world: World) -> None:
        extra_locks: Dict[int, List[Tuple[float, float]]] = {}
        for vid in sorted(self.arrival_rank, key=lambda v: self.arrival_rank[v]):
            if vid in self.granted or vid not in world.vehicles:
                continue
            veh = world.vehicles[vid]
            slots = self._project(world, veh)
            if not slots:
                self.granted.setdefault(vid, {})  # conflict-free route
                self.grant_time.setdefault(vid, world.time)
                continue
            if (
                self._windows(slots, extra_locks, requester_conn=veh.connection_id)
                and self._clear_run_to_line(world, veh)
                and not self._merge_blocked(world, veh)
            ):
                self._book(vid, slots, world.time)
            else:
                self._shield(extra_locks, slots)

    def _merge_blocked(self, world: World, veh) -> bool:
        """Mirror of the simulator's merge-wait: a committed vehicle from
        another connection has not yet cleared the exit stretch veh enters."""
        conn = world.intersection.connections[veh.connection_id]
        entry_progress = -(conn.exit_s - conn.stop_s)
        for other in world.vehicles.values():
            if other.id == veh.id or other.connection_id == veh.connection_id:
                continue
            oc = world.intersection.connections[other.connection_id]
            if oc.exit_lane != conn.exit_lane or other.s < oc.stop_s:
                continue
            if other.s - oc.exit_s < entry_progress + 2.0 * veh.length:
                return True
        return False

    def _gate(self, world: World, reach: float = 50.0) -> None:
        """Final per-step check: a granted vehicle approaching the line is
        revoked the moment its live projection no longer fits the locks or
        its exit merge is blocked; a late revocation is safe because the
        simulator pins slow line-breachers."""
        for vid in sorted(self.granted):
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if not (conn.stop_s - reach <= veh.s < conn.stop_s):
                continue
            if self._merge_blocked(world, veh):
                self._release(vid)
                continue
            slots = self._project(world, veh)
            if slots and not self._windows(
                slots, {}, ignore_vid=vid, requester_conn=self.conn_of.get(vid)
            ):
                self._release(vid)

    def _commit_breachers(self, world: World) -> None:
        """A revoked vehicle that could not stop and crossed the line anyway
        is granted by necessity, so every other party yields to its windows."""
        for vid in sorted(self.arrival_rank):
            if vid in self.granted:
                continue
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if veh.s >= conn.stop_s + 0.5 or (veh.s >= conn.stop_s and veh.v > 2.0):
                self._book(vid, self._project(world, veh), world.time)

    def _unpin_round(self, world: World) -> None:
        """Breachers pinned right at the line are physically first in their
        lane; re-admit them on a plain window check so they cannot wedge the
        junction."""
        for vid in sorted(self.arrival_rank, key=lambda v: self.arrival_rank[v]):
            if vid in self.granted:
                continue
            veh = world.vehicles.get(vid)
            if veh is None:
                continue
            conn = world.intersection.connections[veh.connection_id]
            if not (conn.stop_s - 0.5 <= veh.s < conn.stop_s + 0.5 and veh.v <= 2.0):
                continue
            slots = self._project(world, veh)
            if self._windows(slots, {}, requester_conn=veh.connection_id):
                self._book(vid, slots, world.time)

    def act(self, world: World) -> Tuple[Dict[int, float], Set[int]]:
        self._register_arrivals(world)
        for vid in sorted(world.vehicles):
            if world.vehicles[vid].v > 0.5:
                self._moving_since[vid] = world.time
            else:
                self._moving_since.setdefault(vid, world.time)
        self._commit_breachers(world)
        self._refresh_committed(world)
        if world.time - self._last_request_t >= self.rerequest_period - 1e-9:
            self._cleanup(world)
            self._revalidate(world)
            self._unpin_round(world)
            self._grant_round(world)
            self._last_request_t = world.time
        self._gate(world)
        hold: Set[int] = set()
        for vid in sorted(world.vehicles):
            veh = world.vehicles[vid]
            conn = world.intersection.connections[veh.connection_id]
            if veh.s >= conn.stop_s + 0.5:
                continue
            if vid not in self.granted and vid in self.arrival_rank:
                hold.add(vid)
        return {}, hold


class FcfsPlatoonController(FcfsVtlController):
    """FCFS over platoons: same-connection vehicles whose projected stop-line
    arrivals chain within a gap threshold are booked together (at most 8)."""

    name = "fcfs_platoon"

    PESSIMISTIC_FLOOR = 1.0  # platoon tails crawl harder than singletons

    def __init__(
        self,
        intersection: Intersection,
        idm: Optional[IdmParams] = None,
        margin: float = 2.0,
        rerequest_period: float = 1.0,
        max_platoon: int = 8,
        gap_threshold: float = 2.0,
    ):
        super().__init__(intersection, idm, margin, rerequest_period)
        self.max_platoon = max_platoon
        self.gap_threshold = gap_threshold

    def _platoon_of(self, world: World, head) -> List:
        conn = world.intersection.connections[head.connection_id]
        mates = [
            v
            for v in world.vehicles.values()
            if v.connection_id == head.connection_id
            and v.id not in self.granted
            and v.id in self.arrival_rank
            and v.s <= head.s
        ]
        mates.sort(key=lambda v: -v.s)  # head first
        group = []
        prev_arrival = None
        for veh in mates:
            arrival = world.time + self.profile.time_to_cover(veh.v, max(conn.stop_s - veh.s, 0.0))
            if prev_arrival is not None and arrival - prev_arrival > self.gap_threshold:
                break
            group.append(veh)
            prev_arrival = arrival
            if len(group) >= self.max_platoon:
                break
        return group

    def _grant_round(self, world: World) -> None:
        extra_locks: Dict[int, List[Tuple[float, float]]] = {}
        for vid in sorted(self.arrival_rank, key=lambda v: self.arrival_rank[v]):
            if vid in self.granted or vid not in world.vehicles:
                continue
            head = world.vehicles[vid]
            group = self._platoon_of(world, head)
            if not group:
                continue
            # members chain behind one another inside the group
            all_slots = {}
            prev_windows = self._leader_windows(world, head)
            for veh in group:
                slots = self._project(world, veh, chain=False)
                slots = self._chain_slots(slots, prev_windows)
                all_slots[veh.id] = slots
                prev_windows = {pid: (t_in, t_out) for pid, t_in, t_out in slots}
            if all(not s for s in all_slots.values()):
                for veh in group:
                    self.granted.setdefault(veh.id, {})
                    self.grant_time.setdefault(veh.id, world.time)
                continue
            # members intentionally share the group window: validate against
            # existing locks only, then book the whole group
            ok = all(
                self._windows(s, extra_locks, requester_conn=head.connection_id)
                for s in all_slots.values()
            )
            ok = ok and self._clear_run_to_line(world, head)
            ok = ok and not self._merge_blocked(world, head)
            if ok:
                for veh in group:
                    self._book(veh.id, all_slots[veh.id], world.time)
            else:
                self._shield(extra_locks, all_slots[head.id])


def make_rule_controller(name: str, intersection: Intersection, idm: Optional[IdmParams] = None, **kw):
    if name == "fixed_time":
        return FixedTimeController(intersection, kw.get("plan"))
    if name == "lqf":
        return LqfController(intersection, kw.get("plan"), kw.get("min_green", 5.0))
    if name == "fcfs_vtl":
        return FcfsVtlController(intersection, idm, kw.get("margin", 1.0))
    if name == "fcfs_platoon":
        return FcfsPlatoonController(
            intersection, idm, kw.get("margin", 1.0),
            max_platoon=kw.get("max_platoon", 8), gap_threshold=kw.get("gap_threshold", 2.0),
        )
    raise ValueError("unknown rule controller %r" % (name,))


def run_controlled(world: World, controller, duration_s: float) -> List[dict]:
    """Drive a world under a rule controller for a fixed duration."""
    n = int(round(duration_s / world.config.sim_dt))
    for _ in range(n):
        control, hold = controller.act(world)
        world.step(control, hold)
    return world.events
