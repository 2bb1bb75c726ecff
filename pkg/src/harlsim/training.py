"""Episode orchestration: hierarchical and flat controllers, training loops.

One simulated episode advances the world step by step. Every lower-cadence
tick the reservation pass runs first, then each controlled CAV's agents are
consulted: the upper agent refreshes its trend once per feedback window, the
lower agent every tick, and the composed per-step speed change drives the
next simulation steps. Experiences from all vehicles an agent controls land
in that agent's single replay memory; upper experiences carry the summed
window reward, lower experiences the per-decision clash penalty. Crossing the
inner-box boundary ends the optimization-area task (done flag set) and hands
the vehicle to the crossing-zone pair; departure ends the crossing task.

The flat variant drives every CAV with one agent over a fixed concatenated
layout (ego block | global block | grid block, inactive block zero-filled),
with the per-step span collapsed to the dynamics envelope and no kept-prior
hold.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .agents import (
    HarlParams,
    StateEncoder,
    compose_action,
    default_agent_specs,
    lower_reward,
    upper_reward,
    upper_step_reward,
)
from .geometry import ZONE_CROSSING, ZONE_OPTIMIZATION, Intersection
from .reservation import BE_CLASHED, ReservationConfig, ReservationScheduler, VehicleView
from .rl.checkpoint import load_agent, save_agent
from .rl.sac import SacAgent, SacConfig
from .sim import World, WorldConfig

FLAT_AGENT_ID = 0
FLAT_SPAN = (-1.0, 0.5)  # per-step speed change, the dynamics envelope


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class EpisodeResult:
    steps: int
    events: List[dict]
    rewards: Dict[int, List[float]]
    collisions: int
    departures: int


class _Track:
    __slots__ = (
        "group",
        "upper_a",
        "lower_a",
        "step_dv",
        "upper_s",
        "upper_acc",
        "ticks",
        "lower_s",
    )

    def __init__(self, group: int):
        self.group = group
        self.upper_a = 0.0
        self.lower_a = 0.0
        self.step_dv = 0.0
        self.upper_s: Optional[np.ndarray] = None
        self.upper_acc = 0.0
        self.ticks = 0
        self.lower_s: Optional[np.ndarray] = None


class HarlRunner:
    """Four-agent hierarchical controller bound to one intersection."""

    def __init__(
        self,
        intersection: Intersection,
        world_config: WorldConfig,
        params: Optional[HarlParams] = None,
        sac_config: Optional[SacConfig] = None,
        reservation_config: Optional[ReservationConfig] = None,
        seed: int = 0,
        update_every: int = 30,
    ):
        self.intersection = intersection
        self.world_config = world_config
        self.params = params or HarlParams()
        self.sac_config = sac_config or SacConfig()
        self.res_config = reservation_config or ReservationConfig(bin_duration=world_config.sim_dt)
        self.seed = seed
        self.update_every = update_every
        self.encoder = StateEncoder(intersection, self.params)
        self.specs = default_agent_specs(self.params.lower_steps, self.params.upper_multiple)

        enc = self.encoder
        dims = {
            1: enc.global_dim,
            2: enc.global_dim + 1,
            3: enc.relative_dim,
            4: enc.relative_dim + 1,
        }
        scales = {
            1: enc.global_scale(False),
            2: enc.global_scale(True),
            3: enc.relative_scale(False),
            4: enc.relative_scale(True),
        }
        self.agents: Dict[int, SacAgent] = {
            aid: SacAgent(
                dims[aid],
                1,
                self.specs[aid].span,
                self.sac_config,
                seed=derive_seed(seed, aid),
                input_scale=scales[aid],
            )
            for aid in (1, 2, 3, 4)
        }
        self.state_dims = dims

    # ------------------------------------------------------------------ pieces

    def make_world(self, episode: int) -> World:
        cfg = WorldConfig(**{**self.world_config.__dict__})
        cfg.idm = self.world_config.idm
        cfg.seed = derive_seed(self.seed, episode, 1)
        return World(self.intersection, cfg)

    def _reseed_for_episode(self, episode: int, train: bool) -> None:
        for aid, agent in self.agents.items():
            agent.rng = np.random.default_rng(derive_seed(self.seed, episode, aid, 7))

    def _encode(self, ctx, veh, group: int, upper_action: Optional[float]):
        if group == 1:
            return ctx.global_state(veh, upper_action)
        return ctx.relative_state(veh, upper_action)

    def _agents_for(self, group: int) -> Tuple[int, int]:
        return (1, 2) if group == 1 else (3, 4)

    # ----------------------------------------------------------------- episode

    def run_episode(self, episode: int, duration_s: float, train: bool) -> EpisodeResult:
        world = self.make_world(episode)
        sched = ReservationScheduler(self.intersection, self.res_config)
        self._reseed_for_episode(episode, train)
        params = self.params
        dt = world.config.sim_dt
        n_steps = int(round(duration_s / dt))
        rewards: Dict[int, List[float]] = {aid: [] for aid in self.agents}
        tracks: Dict[int, _Track] = {}
        deterministic = not train

        def close_track(vid: int, track: _Track, status, ctx) -> None:
            up_id, lo_id = self._agents_for(track.group)
            r_lo = lower_reward(status, params.rewards)
            zero_lo = np.zeros(self.state_dims[lo_id])
            self.agents[lo_id].memory.push(track.lower_s, [track.lower_a], r_lo, zero_lo, True)
            rewards[lo_id].append(r_lo)
            r_up = track.upper_acc
            zero_up = np.zeros(self.state_dims[up_id])
            self.agents[up_id].memory.push(track.upper_s, [track.upper_a], r_up, zero_up, True)
            rewards[up_id].append(r_up)

        def open_track(vid: int, veh, group: int, status, ctx) -> _Track:
            up_id, lo_id = self._agents_for(group)
            track = _Track(group)
            track.upper_s = self._encode(ctx, veh, group, None)
            a_up, _ = self.agents[up_id].sample_action(track.upper_s, deterministic)
            track.upper_a = float(a_up[0])
            track.lower_s = self._encode(ctx, veh, group, track.upper_a)
            a_lo, _ = self.agents[lo_id].sample_action(track.lower_s, deterministic)
            track.lower_a = float(a_lo[0])
            track.step_dv = compose_action(
                track.upper_a, track.lower_a, veh.v, status, params, dt,
                world.config.v_min, world.config.v_max,
            )
            return track

        for step in range(n_steps):
            if step % params.lower_steps == 0:
                statuses = sched.reassignment_pass(sched.snapshot(world))
                ctx = self.encoder.tick_context(world, sched)

                for vid in [v for v in list(tracks) if v not in world.vehicles]:
                    close_track(vid, tracks.pop(vid), None, ctx)

                for vid in sorted(world.vehicles):
                    veh = world.vehicles[vid]
                    if not veh.is_cav:
                        continue
                    zone = world.zone_of(veh)
                    group = 1 if zone == ZONE_OPTIMIZATION else 2 if zone == ZONE_CROSSING else None
                    track = tracks.get(vid)
                    status = statuses.get(vid)
                    if track is None:
                        if group is not None:
                            tracks[vid] = open_track(vid, veh, group, status, ctx)
                        continue
                    if group is None:
                        close_track(vid, tracks.pop(vid), status, ctx)
                        continue
                    if group != track.group:
                        close_track(vid, tracks.pop(vid), status, ctx)
                        tracks[vid] = open_track(vid, veh, group, status, ctx)
                        continue

                    up_id, lo_id = self._agents_for(group)
                    # close the lower decision taken one cadence ago
                    s_lo_next = self._encode(ctx, veh, group, track.upper_a)
                    r_lo = lower_reward(status, params.rewards)
                    self.agents[lo_id].memory.push(
                        track.lower_s, [track.lower_a], r_lo, s_lo_next, False
                    )
                    rewards[lo_id].append(r_lo)

                    track.ticks += 1
                    if track.ticks >= params.upper_multiple:
                        s_up_next = self._encode(ctx, veh, group, None)
                        r_up = track.upper_acc
                        self.agents[up_id].memory.push(
                            track.upper_s, [track.upper_a], r_up, s_up_next, False
                        )
                        rewards[up_id].append(r_up)
                        track.upper_s = s_up_next
                        a_up, _ = self.agents[up_id].sample_action(s_up_next, deterministic)
                        track.upper_a = float(a_up[0])
                        track.upper_acc = 0.0
                        track.ticks = 0
                        s_lo_next = self._encode(ctx, veh, group, track.upper_a)

                    track.lower_s = s_lo_next
                    a_lo, _ = self.agents[lo_id].sample_action(s_lo_next, deterministic)
                    track.lower_a = float(a_lo[0])
                    track.step_dv = compose_action(
                        track.upper_a, track.lower_a, veh.v, status, params, dt,
                        world.config.v_min, world.config.v_max,
                    )

            control = {vid: t.step_dv for vid, t in tracks.items() if vid in world.vehicles}
            # right-of-way gate: a vehicle whose fresh claim genuinely
            # conflicts with another's (clash or conflicted newcomer) has no
            # assignment and waits at its stop line until a pass clears it;
            # near the line the claim is re-checked every step so a conflict
            # arising between passes cannot slip a vehicle into the box
            hold_ids = set()
            for vid in control:
                st = sched.statuses.get(vid)
                if st is None:
                    continue
                if st.conflicted and st.occupants and not st.holds_assignment:
                    hold_ids.add(vid)
                    continue
                veh = world.vehicles[vid]
                conn = world.intersection.connections[veh.connection_id]
                if conn.stop_s - 20.0 <= veh.s < conn.stop_s + 0.5:
                    view = VehicleView(vid, veh.connection_id, veh.s, veh.v, veh.length)
                    if sched.claim_conflicts_now(view):
                        hold_ids.add(vid)
            events = world.step(control, hold_ids)

            crossed = {e["vehicle"] for e in events if e["event"] == "zone" and e["zone"] == ZONE_CROSSING}
            gone = {e["vehicle"] for e in events if e["event"] == "departure"}
            for vid, track in tracks.items():
                st = sched.statuses.get(vid)
                be_cl = st is not None and st.status == BE_CLASHED
                if track.group == 1:
                    leaves = vid in crossed
                    in_zone = (
                        not leaves
                        and vid in world.vehicles
                        and world.zone_of(world.vehicles[vid]) == ZONE_OPTIMIZATION
                    )
                else:
                    leaves = vid in gone
                    in_zone = (
                        not leaves
                        and vid in world.vehicles
                        and world.zone_of(world.vehicles[vid]) == ZONE_CROSSING
                    )
                track.upper_acc += upper_step_reward(in_zone, be_cl and in_zone, leaves, params.rewards)

            if train and step % self.update_every == 0:
                for aid in sorted(self.agents):
                    if self.agents[aid].ready():
                        self.agents[aid].update()

        departures = sum(1 for e in world.events if e["event"] == "departure")
        return EpisodeResult(n_steps, world.events, rewards, world.collision_count, departures)

    # -------------------------------------------------------------- checkpoints

    def save_checkpoints(self, directory: str, tag: str) -> List[str]:
        paths = []
        for aid, agent in self.agents.items():
            path = os.path.join(directory, "agent%d_%s.ckpt" % (aid, tag))
            with open(path, "wb") as fh:
                fh.write(save_agent(agent))
            paths.append(path)
        return paths

    def load_checkpoints(self, directory: str, tag: str) -> None:
        for aid in sorted(self.agents):
            path = os.path.join(directory, "agent%d_%s.ckpt" % (aid, tag))
            with open(path, "rb") as fh:
                self.agents[aid] = load_agent(fh.read())


class FlatRunner:
    """Single-agent controller: one policy for every CAV in both zones."""

    def __init__(
        self,
        intersection: Intersection,
        world_config: WorldConfig,
        params: Optional[HarlParams] = None,
        sac_config: Optional[SacConfig] = None,
        reservation_config: Optional[ReservationConfig] = None,
        seed: int = 0,
        update_every: int = 30,
    ):
        self.intersection = intersection
        self.world_config = world_config
        self.params = params or HarlParams()
        self.sac_config = sac_config or SacConfig()
        self.res_config = reservation_config or ReservationConfig(bin_duration=world_config.sim_dt)
        self.seed = seed
        self.update_every = update_every
        self.encoder = StateEncoder(intersection, self.params)
        enc = self.encoder
        self.state_dim = enc.global_dim + enc.grid_dim
        scale = np.concatenate([enc.global_scale(False), np.full(enc.grid_dim, 15.0)])
        self.agent = SacAgent(
            self.state_dim,
            1,
            FLAT_SPAN,
            self.sac_config,
            seed=derive_seed(seed, 99),
            input_scale=scale,
        )
        self.agents = {FLAT_AGENT_ID: self.agent}

    def make_world(self, episode: int) -> World:
        cfg = WorldConfig(**{**self.world_config.__dict__})
        cfg.idm = self.world_config.idm
        cfg.seed = derive_seed(self.seed, episode, 1)
        return World(self.intersection, cfg)

    def _state(self, ctx, veh, zone: str) -> np.ndarray:
        enc = self.encoder
        if zone == ZONE_OPTIMIZATION:
            return np.concatenate([ctx.global_state(veh), np.zeros(enc.grid_dim)])
        rel = ctx.relative_state(veh)
        ego = rel[: enc.ego_dim]
        grid = rel[enc.ego_dim :]
        return np.concatenate([ego, np.zeros(enc.global_dim - enc.ego_dim), grid])

    def run_episode(self, episode: int, duration_s: float, train: bool) -> EpisodeResult:
        world = self.make_world(episode)
        sched = ReservationScheduler(self.intersection, self.res_config)
        self.agent.rng = np.random.default_rng(derive_seed(self.seed, episode, 55))
        params = self.params
        dt = world.config.sim_dt
        n_steps = int(round(duration_s / dt))
        rewards: Dict[int, List[float]] = {FLAT_AGENT_ID: []}
        deterministic = not train
        # per-vehicle: [state, action, accumulated step reward]
        pend: Dict[int, list] = {}
        dv_of: Dict[int, float] = {}

        for step in range(n_steps):
            if step % params.lower_steps == 0:
                statuses = sched.reassignment_pass(sched.snapshot(world))
                ctx = self.encoder.tick_context(world, sched)

                for vid in [v for v in list(pend) if v not in world.vehicles]:
                    s, a, acc = pend.pop(vid)
                    dv_of.pop(vid, None)
                    self.agent.memory.push(s, [a], acc, np.zeros(self.state_dim), True)
                    rewards[FLAT_AGENT_ID].append(acc)

                for vid in sorted(world.vehicles):
                    veh = world.vehicles[vid]
                    if not veh.is_cav:
                        continue
                    zone = world.zone_of(veh)
                    active = zone in (ZONE_OPTIMIZATION, ZONE_CROSSING)
                    entry = pend.get(vid)
                    if entry is None:
                        if not active:
                            continue
                        s = self._state(ctx, veh, zone)
                        a, _ = self.agent.sample_action(s, deterministic)
                        pend[vid] = [s, float(a[0]), 0.0]
                        dv_of[vid] = float(a[0])
                        continue
                    s, a, acc = entry
                    status = statuses.get(vid)
                    r = acc + lower_reward(status, params.rewards)
                    if not active:
                        self.agent.memory.push(s, [a], r, np.zeros(self.state_dim), True)
                        rewards[FLAT_AGENT_ID].append(r)
                        pend.pop(vid)
                        dv_of.pop(vid, None)
                        continue
                    s_next = self._state(ctx, veh, zone)
                    self.agent.memory.push(s, [a], r, s_next, False)
                    rewards[FLAT_AGENT_ID].append(r)
                    a_next, _ = self.agent.sample_action(s_next, deterministic)
                    pend[vid] = [s_next, float(a_next[0]), 0.0]
                    dv_of[vid] = float(a_next[0])

            control = {vid: dv for vid, dv in dv_of.items() if vid in world.vehicles}
            events = world.step(control)

            gone = {e["vehicle"] for e in events if e["event"] == "departure"}
            for vid, entry in pend.items():
                st = sched.statuses.get(vid)
                be_cl = st is not None and st.status == BE_CLASHED
                leaves = vid in gone
                in_zone = not leaves and vid in world.vehicles
                entry[2] += upper_step_reward(in_zone, be_cl and in_zone, leaves, params.rewards)

            if train and step % self.update_every == 0 and self.agent.ready():
                self.agent.update()

        departures = sum(1 for e in world.events if e["event"] == "departure")
        return EpisodeResult(n_steps, world.events, rewards, world.collision_count, departures)

    def save_checkpoints(self, directory: str, tag: str) -> List[str]:
        path = os.path.join(directory, "flat_%s.ckpt" % tag)
        with open(path, "wb") as fh:
            fh.write(save_agent(self.agent))
        return [path]

    def load_checkpoints(self, directory: str, tag: str) -> None:
        path = os.path.join(directory, "flat_%s.ckpt" % tag)
        with open(path, "rb") as fh:
            self.agent = load_agent(fh.read())
        self.agents = {FLAT_AGENT_ID: self.agent}


# ----------------------------------------------------------------- training run


@dataclass
class TrainSettings:
    episodes: int = 100
    episode_seconds: float = 600.0
    checkpoint_every: int = 10
    reward_window: int = 10_000  # decisions per averaging window


class TrainingRun:
    """Drives epochs, persists checkpoints, reward curves, and resume state."""

    def __init__(self, runner, out_dir: str, settings: Optional[TrainSettings] = None):
        self.runner = runner
        self.out_dir = out_dir
        self.settings = settings or TrainSettings()
        os.makedirs(out_dir, exist_ok=True)
        self.reward_log: Dict[int, List[float]] = {aid: [] for aid in runner.agents}
        self.next_episode = 0

    # ------------------------------------------------------------------- state

    def _state_path(self) -> str:
        return os.path.join(self.out_dir, "run_state.npz")

    def save_state(self) -> None:
        arrays = {"next_episode": np.array([self.next_episode], dtype=np.int64)}
        for aid, agent in self.runner.agents.items():
            blob = np.frombuffer(save_agent(agent), dtype=np.uint8)
            arrays["agent%d_ckpt" % aid] = blob
            mem = agent.memory
            arrays["agent%d_mem" % aid] = np.array([mem.ptr, mem.size], dtype=np.int64)
            arrays["agent%d_mem_s" % aid] = mem.states[: mem.size]
            arrays["agent%d_mem_a" % aid] = mem.actions[: mem.size]
            arrays["agent%d_mem_r" % aid] = mem.rewards[: mem.size]
            arrays["agent%d_mem_s2" % aid] = mem.next_states[: mem.size]
            arrays["agent%d_mem_d" % aid] = mem.dones[: mem.size]
            arrays["agent%d_rewards" % aid] = np.array(self.reward_log[aid], dtype=np.float64)
            state = agent.update_rng.bit_generator.state
            arrays["agent%d_urng" % aid] = np.frombuffer(
                json.dumps(state).encode("utf-8"), dtype=np.uint8
            )
        tmp = self._state_path() + ".tmp"
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, self._state_path())

    def load_state(self) -> None:
        data = np.load(self._state_path())
        self.next_episode = int(data["next_episode"][0])
        for aid in list(self.runner.agents):
            agent = load_agent(data["agent%d_ckpt" % aid].tobytes())
            ptr, size = data["agent%d_mem" % aid]
            agent.memory.states[:size] = data["agent%d_mem_s" % aid]
            agent.memory.actions[:size] = data["agent%d_mem_a" % aid]
            agent.memory.rewards[:size] = data["agent%d_mem_r" % aid]
            agent.memory.next_states[:size] = data["agent%d_mem_s2" % aid]
            agent.memory.dones[:size] = data["agent%d_mem_d" % aid]
            agent.memory.ptr = int(ptr)
            agent.memory.size = int(size)
            agent.update_rng.bit_generator.state = json.loads(
                data["agent%d_urng" % aid].tobytes().decode("utf-8")
            )
            self.runner.agents[aid] = agent
            self.reward_log[aid] = data["agent%d_rewards" % aid].tolist()
        if hasattr(self.runner, "agent"):
            self.runner.agent = self.runner.agents[FLAT_AGENT_ID]

    # -------------------------------------------------------------------- loop

    def write_reward_csv(self) -> None:
        window = self.settings.reward_window
        for aid, log in self.reward_log.items():
            path = os.path.join(self.out_dir, "rewards_agent%d.csv" % aid)
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "mean_reward"])
                for end in range(window, len(log) + 1, window):
                    mean = float(np.mean(log[end - window : end]))
                    writer.writerow([end, "%.6f" % mean])
                if 0 < len(log) < window:
                    writer.writerow([len(log), "%.6f" % float(np.mean(log))])

    def run(self, resume: bool = False) -> None:
        if resume and os.path.exists(self._state_path()):
            self.load_state()
        st = self.settings
        while self.next_episode < st.episodes:
            ep = self.next_episode
            result = self.runner.run_episode(ep, st.episode_seconds, train=True)
            for aid, values in result.rewards.items():
                self.reward_log[aid].extend(values)
            self.next_episode = ep + 1
            if self.next_episode % st.checkpoint_every == 0 or self.next_episode == st.episodes:
                self.runner.save_checkpoints(self.out_dir, "ep%04d" % self.next_episode)
                self.write_reward_csv()
                self.save_state()
