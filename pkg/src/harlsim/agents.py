"""Agent table, state encoders, hierarchical action composition, and rewards.

Four agents steer every controlled CAV, two per zone: in the optimization
area an upper "push forward" agent (long cadence, span [0, 2] m/s) and a
lower corrective agent (short cadence, span [-0.55, 0.4] m/s) observe a
global layout; inside the box the same pair structure observes ego-centric
occupancy grids. The applied per-step speed change is the upper trend spread
evenly over the upper/lower cadence ratio plus the lower action, clamped to
the vehicle envelope. A vehicle holding a prior reservation under conflict
keeps its speed (zero action) until the next pass frees it.

Upper rewards follow the four-case step table (-1 in task, -300 when the
standing reservation is hit, +50 on completing the zone task, 0 after),
summed over the feedback window; lower rewards are -50 on causing a clash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .geometry import ZONE_CROSSING, ZONE_OPTIMIZATION, Intersection
from .idm import ACCEL_MAX, DECEL_MAX
from .reservation import (
    BE_CLASHED,
    CLASH,
    UNASSIGNED_NEW,
    AssignmentStatus,
    ReservationScheduler,
)
from .sim import Vehicle, World

UPPER_SPAN = (0.0, 2.0)
LOWER_SPAN = (-0.55, 0.4)

OBS_GLOBAL = "global"
OBS_RELATIVE = "relative"


@dataclass(frozen=True)
class AgentSpec:
    id: int
    action_steps: int  # simulation steps per decision
    observation: str
    function: str
    span: Tuple[float, float]


def default_agent_specs(lower_steps: int = 3, upper_multiple: int = 4) -> Dict[int, AgentSpec]:
    upper_steps = lower_steps * upper_multiple
    return {
        1: AgentSpec(1, upper_steps, OBS_GLOBAL, "prevent_being_clashed", UPPER_SPAN),
        2: AgentSpec(2, lower_steps, OBS_GLOBAL, "prevent_clashing", LOWER_SPAN),
        3: AgentSpec(3, upper_steps, OBS_RELATIVE, "prevent_being_collided", UPPER_SPAN),
        4: AgentSpec(4, lower_steps, OBS_RELATIVE, "prevent_colliding", LOWER_SPAN),
    }


@dataclass(frozen=True)
class RewardConfig:
    in_intersection: float = -1.0
    be_clashed: float = -300.0
    leave: float = 50.0
    after: float = 0.0
    will_clash: float = -50.0


@dataclass(frozen=True)
class HarlParams:
    lower_steps: int = 3  # 0.6 s at the 0.2 s step
    upper_multiple: int = 4  # upper cadence = 4 lower decisions (2.4 s)
    neighbor_slots: int = 9
    receptive_cells: int = 20  # L_r
    cell_size: float = 1.5  # meters per receptive-field cell
    rewards: RewardConfig = field(default_factory=RewardConfig)

    @property
    def upper_steps(self) -> int:
        return self.lower_steps * self.upper_multiple


# --------------------------------------------------------------------- rewards


def upper_step_reward(in_task_zone: bool, be_clashed: bool, leaves: bool, cfg: RewardConfig) -> float:
    """Exactly one case of the upper step-reward table."""
    if leaves:
        return cfg.leave
    if be_clashed:
        return cfg.be_clashed
    if in_task_zone:
        return cfg.in_intersection
    return cfg.after


def upper_reward(window: Sequence[float]) -> float:
    """Feedback-period reward: plain sum of the step rewards in the window."""
    return float(sum(window))


def lower_reward(status: Optional[AssignmentStatus], cfg: RewardConfig) -> float:
    """Penalty for causing a conflict in the shared timetable.

    Fires for a clash (new claim over a standing holder's slots) and equally
    for a conflicted requester that has no standing yet: both "will clash
    other vehicles" in the timetable sense. Holders that are clashed into and
    vehicles with clean assignments get nothing.
    """
    if status is None:
        return 0.0
    if status.status == CLASH:
        return cfg.will_clash
    if status.status == UNASSIGNED_NEW and status.conflicted:
        return cfg.will_clash
    return 0.0


# ------------------------------------------------------------ action composition


def compose_action(
    a_upper: float,
    a_lower: float,
    v: float,
    status: Optional[AssignmentStatus],
    params: HarlParams,
    sim_dt: float = 0.2,
    v_min: float = 0.0,
    v_max: float = 15.0,
) -> float:
    """Per-simulation-step speed change from the two agent trends.

    The upper trend is divided by the cadence ratio so it integrates once per
    upper window; the sum is spread uniformly over the lower decision's
    simulation steps and clamped to the dynamics envelope. A kept-prior hold
    (maintained reservation under conflict) forces zero change.
    """
    if status is not None and status.kept_prior:
        return 0.0
    raw = a_upper / params.upper_multiple + a_lower  # per lower decision
    per_step = raw / params.lower_steps
    per_step = min(max(per_step, DECEL_MAX * sim_dt), ACCEL_MAX * sim_dt)
    per_step = min(max(per_step, v_min - v), v_max - v)
    return per_step


# --------------------------------------------------------------- state encoding


class StateEncoder:
    """Builds the global and ego-centric state vectors.

    Global layout: an ego block of n_connections x 6 rows (only the ego's
    connection row is non-zero) followed by an others block of
    n_connections x slots x 6 holding the vehicles nearest the box per
    connection. Features per vehicle: planar x, y, speed, heading, left-turn
    flag, conflict flag (with ego, for the others block).

    Relative layout: the same ego block plus an L_r x L_r x 3 grid in the
    ego frame, cells holding occupant speeds; channel 0 carries non-left
    traffic, channel 1 left-turners, channel 2 vehicles in conflict with ego.
    """

    def __init__(self, intersection: Intersection, params: HarlParams):
        self.intersection = intersection
        self.params = params
        self.n_c = intersection.n_connections
        self.ego_dim = self.n_c * 6
        self.global_dim = self.ego_dim + self.n_c * params.neighbor_slots * 6
        self.grid_dim = params.receptive_cells * params.receptive_cells * 3
        self.relative_dim = self.ego_dim + self.grid_dim

    # feature scales used by the agents' input normalization
    def _vehicle_scale(self) -> List[float]:
        return [100.0, 100.0, 15.0, math.pi, 1.0, 1.0]

    def global_scale(self, with_action: bool = False) -> np.ndarray:
        per = self._vehicle_scale()
        scale = per * self.n_c + per * (self.n_c * self.params.neighbor_slots)
        if with_action:
            scale.append(2.0)
        return np.array(scale)

    def relative_scale(self, with_action: bool = False) -> np.ndarray:
        scale = self._vehicle_scale() * self.n_c + [15.0] * self.grid_dim
        if with_action:
            scale.append(2.0)
        return np.array(scale)

    # ------------------------------------------------------------- tick context

    def tick_context(self, world: World, scheduler: ReservationScheduler) -> "TickContext":
        return TickContext(self, world, scheduler)

    def encode_global(
        self,
        world: World,
        scheduler: ReservationScheduler,
        ego: Vehicle,
        upper_action: Optional[float] = None,
    ) -> np.ndarray:
        return self.tick_context(world, scheduler).global_state(ego, upper_action)

    def encode_relative(
        self,
        world: World,
        scheduler: ReservationScheduler,
        ego: Vehicle,
        upper_action: Optional[float] = None,
    ) -> np.ndarray:
        return self.tick_context(world, scheduler).relative_state(ego, upper_action)


class TickContext:
    """Per-decision-step cache shared by all ego encodings."""

    def __init__(self, encoder: StateEncoder, world: World, scheduler: ReservationScheduler):
        self.encoder = encoder
        self.world = world
        self.scheduler = scheduler
        inter = encoder.intersection
        slots = encoder.params.neighbor_slots

        vehicles = sorted(world.vehicles.values(), key=lambda v: v.id)
        n = len(vehicles)
        self.ids = [v.id for v in vehicles]
        self.row_of = {v.id: i for i, v in enumerate(vehicles)}
        self.pos = np.zeros((n, 2))
        self.heading = np.zeros(n)
        self.speed = np.array([v.v for v in vehicles])
        self.left = np.zeros(n)
        self.conn = np.array([v.connection_id for v in vehicles], dtype=int)

        by_conn: Dict[int, List[int]] = {}
        for i, v in enumerate(vehicles):
            by_conn.setdefault(v.connection_id, []).append(i)
        for cid, idxs in by_conn.items():
            c = inter.connections[cid]
            s = np.array([vehicles[i].s for i in idxs])
            self.pos[idxs, 0] = np.interp(s, c.cum_len, c.path[:, 0])
            self.pos[idxs, 1] = np.interp(s, c.cum_len, c.path[:, 1])
            ahead = np.minimum(s + 0.5, c.length)
            hx = np.interp(ahead, c.cum_len, c.path[:, 0]) - self.pos[idxs, 0]
            hy = np.interp(ahead, c.cum_len, c.path[:, 1]) - self.pos[idxs, 1]
            degenerate = (np.abs(hx) + np.abs(hy)) < 1e-9  # at the very path end
            if degenerate.any():
                behind = np.maximum(s - 0.5, 0.0)
                bx = self.pos[idxs, 0] - np.interp(behind, c.cum_len, c.path[:, 0])
                by = self.pos[idxs, 1] - np.interp(behind, c.cum_len, c.path[:, 1])
                hx = np.where(degenerate, bx, hx)
                hy = np.where(degenerate, by, hy)
            self.heading[idxs] = np.arctan2(hy, hx)
            self.left[idxs] = 1.0 if c.is_left_turn else 0.0

        # closeness to the box: 0 inside, distance otherwise
        closeness = np.zeros(n)
        for i, v in enumerate(vehicles):
            c = inter.connections[v.connection_id]
            if v.s < c.stop_s:
                closeness[i] = c.stop_s - v.s
            elif v.s <= c.exit_s:
                closeness[i] = 0.0
            else:
                closeness[i] = v.s - c.exit_s
        self.closeness = closeness

        # per connection: row indices ordered nearest-the-box first
        self.ranked: Dict[int, List[int]] = {}
        for cid, idxs in by_conn.items():
            self.ranked[cid] = sorted(idxs, key=lambda i: (closeness[i], self.ids[i]))

        # base others-block (n_c, slots, 6) without ego exclusion or flags
        self.base_block = np.zeros((encoder.n_c, slots, 6))
        self.slot_of: Dict[int, Tuple[int, int]] = {}
        for cid, order in self.ranked.items():
            for slot, i in enumerate(order[:slots]):
                self.base_block[cid, slot] = self._features(i)
                self.slot_of[self.ids[i]] = (cid, slot)

    def _features(self, row: int, conflict: float = 0.0) -> np.ndarray:
        return np.array(
            [
                self.pos[row, 0],
                self.pos[row, 1],
                self.speed[row],
                self.heading[row],
                self.left[row],
                conflict,
            ]
        )

    def _ego_block(self, ego: Vehicle) -> np.ndarray:
        enc = self.encoder
        block = np.zeros((enc.n_c, 6))
        row = self.row_of[ego.id]
        in_conflict = 1.0 if ego.id in self.scheduler.lc else 0.0
        block[ego.connection_id] = self._features(row, in_conflict)
        return block

    def global_state(self, ego: Vehicle, upper_action: Optional[float] = None) -> np.ndarray:
        enc = self.encoder
        slots = enc.params.neighbor_slots
        others = self.base_block.copy()

        # rebuild ego's connection row without ego itself
        cid = ego.connection_id
        order = [i for i in self.ranked.get(cid, []) if self.ids[i] != ego.id]
        others[cid] = 0.0
        for slot, i in enumerate(order[:slots]):
            others[cid, slot] = self._features(i)
        # conflict-with-ego flags
        for partner in self.scheduler.conflict_partners(ego.id):
            loc = self.slot_of.get(partner)
            if loc is None:
                continue
            pcid, pslot = loc
            if pcid == cid:
                prow = self.row_of.get(partner)
                if prow is None or prow not in order[:slots]:
                    continue
                others[pcid, order.index(prow), 5] = 1.0
            else:
                others[pcid, pslot, 5] = 1.0

        parts = [self._ego_block(ego).ravel(), others.ravel()]
        if upper_action is not None:
            parts.append(np.array([upper_action]))
        return np.concatenate(parts)

    def relative_state(self, ego: Vehicle, upper_action: Optional[float] = None) -> np.ndarray:
        enc = self.encoder
        L = enc.params.receptive_cells
        cell = enc.params.cell_size
        grid = np.zeros((L, L, 3))
        row = self.row_of[ego.id]
        ego_pos = self.pos[row]
        heading = self.heading[row]
        cos_h, sin_h = math.cos(-heading), math.sin(-heading)
        partners = self.scheduler.conflict_partners(ego.id)

        rel = self.pos - ego_pos
        rx = rel[:, 0] * cos_h - rel[:, 1] * sin_h
        ry = rel[:, 0] * sin_h + rel[:, 1] * cos_h
        cols = np.floor(rx / cell).astype(int) + L // 2
        rows = np.floor(ry / cell).astype(int) + L // 2
        inside = (cols >= 0) & (cols < L) & (rows >= 0) & (rows < L)
        for i in np.nonzero(inside)[0]:
            if self.ids[i] == ego.id:
                continue
            ch = 1 if self.left[i] > 0 else 0
            r, c = rows[i], cols[i]
            grid[r, c, ch] = max(grid[r, c, ch], self.speed[i])
            if self.ids[i] in partners:
                grid[r, c, 2] = max(grid[r, c, 2], self.speed[i])

        parts = [self._ego_block(ego).ravel(), grid.ravel()]
        if upper_action is not None:
            parts.append(np.array([upper_action]))
        return np.concatenate(parts)
