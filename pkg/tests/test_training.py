import numpy as np
import pytest

from harlsim.agents import HarlParams
from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.rl.sac import SacConfig
from harlsim.sim import WorldConfig
from harlsim.training import (
    FLAT_AGENT_ID,
    FLAT_SPAN,
    FlatRunner,
    HarlRunner,
    TrainingRun,
    TrainSettings,
)


@pytest.fixture(scope="module")
def inter():
    return build_intersection(IntersectionSpec())


def small_sac(**kw):
    kw.setdefault("hidden", (16, 16))
    kw.setdefault("warmup_decisions", 50)
    kw.setdefault("memory_capacity", 5000)
    kw.setdefault("batch_size", 32)
    return SacConfig(**kw)


def make_harl(inter, seed=0, **kw):
    wc = WorldConfig(flow_rate=200.0, hv_fraction=0.0, seed=0)
    return HarlRunner(inter, wc, sac_config=small_sac(), seed=seed, **kw)


def test_episode_smoke_and_experience_grouping(inter):
    runner = make_harl(inter)
    res = runner.run_episode(0, 60.0, train=False)
    assert res.steps == 300
    # all vehicles controlled by one agent share that agent's memory
    assert set(res.rewards) == {1, 2, 3, 4}
    assert len(runner.agents[2].memory) == len(res.rewards[2])
    assert len(res.rewards[2]) > len(res.rewards[1])  # lower cadence is denser


def test_zero_traffic_episode_is_empty(inter):
    wc = WorldConfig(flow_rate=0.01, hv_fraction=0.0, seed=0)
    runner = HarlRunner(inter, wc, sac_config=small_sac(), seed=0)
    res = runner.run_episode(0, 30.0, train=False)
    assert res.collisions == 0
    assert all(len(v) == 0 for v in res.rewards.values())


def test_single_cav_departs_and_hands_off(inter):
    # liveness: one CAV alone crosses and departs; its optimization-area task
    # closes with a done flag when it enters the box
    wc = WorldConfig(flow_rate=0.01, hv_fraction=0.0, seed=1)
    runner = HarlRunner(inter, wc, sac_config=small_sac(), seed=3)
    world = runner.make_world(0)

    # drive the loop manually with one injected vehicle
    import types

    runner.make_world = types.MethodType(lambda self, ep: world, runner)
    veh = world.spawn(0, kind="cav", connection_id=1)
    res = runner.run_episode(0, 120.0, train=False)
    assert res.departures >= 1
    dones1 = runner.agents[1].memory.dones[: len(runner.agents[1].memory)]
    assert dones1.max() == 1.0  # group-1 task closed
    assert len(runner.agents[3].memory) > 0  # crossing-zone pair took over


def test_episode_determinism(inter):
    r1 = make_harl(inter, seed=9)
    r2 = make_harl(inter, seed=9)
    a = r1.run_episode(0, 40.0, train=False)
    b = r2.run_episode(0, 40.0, train=False)
    assert a.events == b.events
    assert a.rewards == b.rewards


def test_applied_dv_respects_dynamics_clamp(inter):
    runner = make_harl(inter, seed=4)
    world = runner.make_world(0)
    import types

    runner.make_world = types.MethodType(lambda self, ep: world, runner)
    res = runner.run_episode(0, 60.0, train=False)
    # the world's invariant suite raises on violations; also check recorded dv
    for e in res.events:
        assert e["event"] != "invariant_violation"


def test_cadence_of_actions(inter):
    # upper trends change only at upper-cadence ticks, lower at lower ticks
    runner = make_harl(inter, seed=5)
    params = runner.params
    world = runner.make_world(0)
    import types

    runner.make_world = types.MethodType(lambda self, ep: world, runner)
    veh = world.spawn(0, kind="cav", connection_id=1)
    # track the composed per-step command across a stretch of steps
    seen = []
    orig_step = world.step

    def spy(control=None, hold_ids=None):
        seen.append(dict(control or {}))
        return orig_step(control, hold_ids)

    world.step = spy
    runner.run_episode(0, 30.0, train=False)
    dvs = [c.get(veh.id) for c in seen if c.get(veh.id) is not None]
    # the per-step command is constant within each lower window
    for start in range(0, len(dvs) - params.lower_steps, params.lower_steps):
        window = dvs[start : start + params.lower_steps]
        assert max(window) - min(window) < 1e-12


def test_flat_runner_smoke_and_layout(inter):
    wc = WorldConfig(flow_rate=200.0, hv_fraction=0.0, seed=0)
    runner = FlatRunner(inter, wc, sac_config=small_sac(), seed=2)
    assert runner.agent.span == FLAT_SPAN
    assert runner.state_dim == runner.encoder.global_dim + runner.encoder.grid_dim
    res = runner.run_episode(0, 40.0, train=False)
    assert set(res.rewards) == {FLAT_AGENT_ID}
    assert len(runner.agent.memory) == len(res.rewards[FLAT_AGENT_ID])


def test_training_run_checkpoints_and_resume(tmp_path, inter):
    settings = TrainSettings(episodes=4, episode_seconds=20.0, checkpoint_every=2, reward_window=50)

    def fresh():
        return make_harl(inter, seed=7, update_every=20)

    full = TrainingRun(fresh(), str(tmp_path / "full"), settings)
    full.run()
    # interrupted twin: stop after 2 episodes, then resume
    half_settings = TrainSettings(episodes=2, episode_seconds=20.0, checkpoint_every=2, reward_window=50)
    part = TrainingRun(fresh(), str(tmp_path / "part"), half_settings)
    part.run()
    resumed = TrainingRun(fresh(), str(tmp_path / "part"), settings)
    resumed.run(resume=True)

    for aid in (1, 2, 3, 4):
        p1 = tmp_path / "full" / ("agent%d_ep0004.ckpt" % aid)
        p2 = tmp_path / "part" / ("agent%d_ep0004.ckpt" % aid)
        assert p1.read_bytes() == p2.read_bytes()
    # reward CSVs exist
    assert (tmp_path / "full" / "rewards_agent1.csv").exists()
