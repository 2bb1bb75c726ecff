"""Shared expected reservation timetable and per-step assignment protocol.

The timetable is a conflict-point x future-time-bin occupancy grid. Every
lower-level decision step the whole table is rebuilt: vehicles still heading
for conflict points request the slots they would occupy at their current
speed, processed nearest-to-their-last-conflict-point first. A request writes
its cells unconditionally (claims accumulate); a request that finds cells
already claimed raises a conflict, and both parties enter the step's conflict
set.

Per-vehicle status for the step:

* ``assigned``        -- the request found all slots free.
* ``be_clashed``      -- a slot holder (assigned on the previous step) whose
                         standing was hit by a new claim, or whose own refresh
                         failed; it holds its assignment and freezes its speed
                         (``kept_prior``).
* ``clash``           -- a non-holder whose request overlapped a holder's
                         slots.
* ``unassigned_new``  -- a conflicted vehicle that never held an assignment
                         (also any vehicle still outside the controlled area).

Vehicles slower than ``eps_v`` cannot produce finite slot indices; they are
reported conflicted with no occupants and drop any held standing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .geometry import ZONE_CROSSING, ZONE_OPTIMIZATION, ZONE_OUTSIDE, Intersection, locate

ASSIGNED = "assigned"
CLASH = "clash"
BE_CLASHED = "be_clashed"
UNASSIGNED_NEW = "unassigned_new"


@dataclass(frozen=True)
class ReservationConfig:
    bin_duration: float = 0.2  # seconds per bin (= simulation step)
    horizon_bins: int = 100  # T_r; 20 s lookahead at the default bin
    eps_v: float = 0.1  # below this speed no slot indices exist

    @property
    def horizon_seconds(self) -> float:
        return self.bin_duration * self.horizon_bins


@dataclass
class AssignmentStatus:
    status: str
    kept_prior: bool = False
    conflicted: bool = False
    occupants: frozenset = frozenset()

    @property
    def holds_assignment(self) -> bool:
        return self.status in (ASSIGNED, BE_CLASHED)


class ReservationTable:
    """N_q x T_r occupancy grid with per-cell first-claimant identity."""

    def __init__(self, n_points: int, config: ReservationConfig):
        self.config = config
        self.n_points = n_points
        self.grid = np.zeros((n_points, config.horizon_bins), dtype=np.uint8)
        self.occupant = np.full((n_points, config.horizon_bins), -1, dtype=np.int64)

    def clear(self) -> None:
        self.grid[:] = 0
        self.occupant[:] = -1

    def occupied_triples(self) -> List[Tuple[int, int, int]]:
        """(conflict point, bin, vehicle) rows for run-log snapshots."""
        ks, bs = np.nonzero(self.grid)
        return [(int(k), int(b), int(self.occupant[k, b])) for k, b in zip(ks, bs)]

    def snapshot_csv(self) -> str:
        lines = ["point,bin,vehicle"]
        lines.extend("%d,%d,%d" % row for row in self.occupied_triples())
        return "\n".join(lines) + "\n"


def slot_bins(distance: float, speed: float, length: float, config: ReservationConfig) -> Optional[Tuple[int, int]]:
    """Inclusive bin range a vehicle occupies at a conflict point, or None.

    Entry at distance/speed, exit once the full length has passed; fractional
    bins are covered conservatively (floor(start) .. ceil(end)-1). Intervals
    starting beyond the horizon are dropped, the rest clamped into it. A
    vehicle already straddling the point (distance down to -length) claims
    from the first bin.
    """
    start = distance / speed
    if start > config.horizon_seconds:
        return None
    end = (distance + length) / speed
    if end < 0.0:
        return None
    b0 = int(math.floor(start / config.bin_duration))
    b1 = int(math.ceil(end / config.bin_duration)) - 1
    b1 = max(b1, b0)
    b0 = min(max(b0, 0), config.horizon_bins - 1)
    b1 = min(max(b1, 0), config.horizon_bins - 1)
    return b0, b1


def try_reserve(
    table: ReservationTable,
    lc: Set[int],
    vehicle_id: int,
    distances: Sequence[Tuple[int, float]],
    speed: float,
    length: float,
) -> Tuple[bool, Set[int]]:
    """Request slots at each remaining conflict point; returns (conflicted, occupants).

    distances are (conflict point id, remaining distance) pairs for points not
    yet passed. Cells are written even on conflict (claims accumulate); the
    conflict set gains both parties only when a genuine overlap occurred.
    """
    cfg = table.config
    if speed < cfg.eps_v:
        return True, set()
    conflicted = False
    occupants: Set[int] = set()
    for point_id, dist in distances:
        bins = slot_bins(dist, speed, length, cfg)
        if bins is None:
            continue
        b0, b1 = bins
        cells = slice(b0, b1 + 1)
        occ = table.occupant[point_id, cells]
        hit = (table.grid[point_id, cells] == 1) & (occ != vehicle_id)
        if hit.any():
            conflicted = True
            occupants.update(int(x) for x in occ[hit & (occ >= 0)])
        table.grid[point_id, cells] = 1
        free = occ == -1
        if free.any():
            occ[free] = vehicle_id
    if conflicted and occupants:
        lc.add(vehicle_id)
        lc.update(occupants)
    return conflicted, occupants


@dataclass
class VehicleView:
    """Minimal kinematic snapshot the scheduler needs per vehicle."""

    id: int
    connection_id: int
    s: float
    v: float
    length: float


class ReservationScheduler:
    """Owns the table, the conflict set, and per-step status bookkeeping."""

    def __init__(self, intersection: Intersection, config: Optional[ReservationConfig] = None):
        self.intersection = intersection
        self.config = config or ReservationConfig()
        self.table = ReservationTable(intersection.n_conflict_points, self.config)
        self.lc: Set[int] = set()
        self.statuses: Dict[int, AssignmentStatus] = {}
        self.conflict_pairs: Set[Tuple[int, int]] = set()
        self._held_prev: Set[int] = set()

    def snapshot(self, world) -> List[VehicleView]:
        return [
            VehicleView(v.id, v.connection_id, v.s, v.v, v.length)
            for v in world.vehicles.values()
        ]

    def reassignment_pass(self, vehicles: Sequence[VehicleView]) -> Dict[int, AssignmentStatus]:
        """Rebuild the table from scratch and classify every present vehicle."""
        spec = self.intersection.spec
        self.table.clear()
        self.lc = set()
        self.conflict_pairs = set()
        statuses: Dict[int, AssignmentStatus] = {}

        participants: List[Tuple[float, VehicleView]] = []
        for view in vehicles:
            conn = self.intersection.connections[view.connection_id]
            zone = locate(view.s, conn, spec)
            if zone == ZONE_OUTSIDE:
                # upstream of the controlled area: not yet participating
                statuses[view.id] = AssignmentStatus(UNASSIGNED_NEW)
                continue
            # a point stays claimed until the vehicle's rear clears it; a
            # vehicle whose front already left the box keeps claiming any
            # point its body still covers
            remaining = [
                (pid, d - view.s)
                for pid, d in zip(conn.conflict_point_ids, conn.conflict_distances)
                if d >= view.s - view.length
            ]
            if not remaining:
                # past the last conflict point (or a conflict-free route):
                # nothing to negotiate
                statuses[view.id] = AssignmentStatus(ASSIGNED)
                continue
            dist_last = conn.conflict_distances[-1] - view.s
            participants.append((dist_last, view))

        participants.sort(key=lambda item: (item[0], item[1].id))

        remaining_of: Dict[int, List[Tuple[int, float]]] = {}
        for _, view in participants:
            conn = self.intersection.connections[view.connection_id]
            remaining_of[view.id] = [
                (pid, d - view.s)
                for pid, d in zip(conn.conflict_point_ids, conn.conflict_distances)
                if d >= view.s - view.length
            ]

        for _, view in participants:
            conflicted, occupants = try_reserve(
                self.table, self.lc, view.id, remaining_of[view.id], view.v, view.length
            )
            for occ in sorted(occupants):
                self.conflict_pairs.add((min(view.id, occ), max(view.id, occ)))
            held = view.id in self._held_prev and view.v >= self.config.eps_v
            if not conflicted:
                statuses[view.id] = AssignmentStatus(ASSIGNED, conflicted=False)
            elif held:
                # a standing holder maintains its assignment and freezes speed;
                # the fresh claimants that displaced it are the clashers
                statuses[view.id] = AssignmentStatus(
                    BE_CLASHED, kept_prior=True, conflicted=True, occupants=frozenset(occupants)
                )
                for occ in occupants:
                    if occ in statuses and occ not in self._held_prev:
                        statuses[occ] = AssignmentStatus(
                            CLASH, conflicted=statuses[occ].conflicted, occupants=statuses[occ].occupants
                        )
            else:
                holders = {occ for occ in occupants if occ in self._held_prev}
                if holders:
                    statuses[view.id] = AssignmentStatus(
                        CLASH, conflicted=True, occupants=frozenset(occupants)
                    )
                    for occ in holders:
                        if occ in statuses:
                            prior = statuses[occ]
                            statuses[occ] = AssignmentStatus(
                                BE_CLASHED,
                                kept_prior=True,
                                conflicted=prior.conflicted,
                                occupants=prior.occupants,
                            )
                else:
                    statuses[view.id] = AssignmentStatus(
                        UNASSIGNED_NEW, conflicted=True, occupants=frozenset(occupants)
                    )

        self.statuses = statuses
        self._held_prev = {vid for vid, st in statuses.items() if st.holds_assignment}
        return statuses

    def claim_conflicts_now(self, view: VehicleView) -> bool:
        """Dry-run check: would this vehicle's slots, recomputed from its
        current kinematics, overlap another vehicle's standing claims? Reads
        the table without writing; used as a per-step right-of-way gate
        between full reassignment passes."""
        if view.v < self.config.eps_v:
            return False
        conn = self.intersection.connections[view.connection_id]
        for pid, d in zip(conn.conflict_point_ids, conn.conflict_distances):
            if d < view.s - view.length:
                continue
            bins = slot_bins(d - view.s, view.v, view.length, self.config)
            if bins is None:
                continue
            cells = slice(bins[0], bins[1] + 1)
            occ = self.table.occupant[pid, cells]
            hit = (self.table.grid[pid, cells] == 1) & (occ != view.id) & (occ >= 0)
            if hit.any():
                return True
        return False

    def status_of(self, vehicle_id: int) -> AssignmentStatus:
        try:
            return self.statuses[vehicle_id]
        except KeyError:
            raise LookupError(
                "no assignment status for vehicle %r (departed or never seen)" % (vehicle_id,)
            )

    def in_conflict_with(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.conflict_pairs

    def conflict_partners(self, vehicle_id: int) -> Set[int]:
        out = set()
        for x, y in self.conflict_pairs:
            if x == vehicle_id:
                out.add(y)
            elif y == vehicle_id:
                out.add(x)
        return out
