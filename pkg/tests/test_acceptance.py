"""Acceptance suite: one test per criterion, each printing a PASS line.

The learned-controller criteria (6 and 7) train three seeds of both the
hierarchical and the flat controller at the desk-scale preset; that is the
expensive part of this suite (on the order of two hours of wall time). Set
HARLSIM_ACCEPT_CACHE to a directory to keep those training artifacts between
runs while iterating.

Run with: pytest tests/test_acceptance.py -v -s
"""

import math
import os
import time

import numpy as np
import pytest

from harlsim.agents import RewardConfig, lower_reward, upper_reward, upper_step_reward
from harlsim.baselines import (
    FcfsPlatoonController,
    FcfsVtlController,
    FixedTimeController,
    LqfController,
    run_controlled,
)
from harlsim.cli import main as cli_main
from harlsim.config import ScenarioConfig
from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.metrics import compute_metrics
from harlsim.reservation import (
    ASSIGNED,
    AssignmentStatus,
    CLASH,
    BE_CLASHED,
    UNASSIGNED_NEW,
    ReservationConfig,
    ReservationScheduler,
    ReservationTable,
    VehicleView,
    slot_bins,
    try_reserve,
)
from harlsim.rl.sac import SacAgent, SacConfig
from harlsim.sim import World, WorldConfig
from harlsim.training import FlatRunner, HarlRunner, TrainingRun, TrainSettings

SEED = int(os.environ.get("HARLSIM_ACCEPT_SEED", "0"))


def report(criterion: int, passed: bool, detail: str) -> None:
    print("ACCEPTANCE %2d %s  %s" % (criterion, "PASS" if passed else "FAIL", detail))


@pytest.fixture(scope="session")
def intersection():
    return build_intersection(IntersectionSpec())


# --------------------------------------------------------------- criterion 1


def test_criterion_01_reservation_exclusivity(intersection):
    """10,000 randomized passes: assigned vehicles never share a (point, bin)."""
    rng = np.random.default_rng(SEED)
    # a connection subset whose conflict points number at most 8
    chosen, points = [], set()
    for c in sorted(intersection.connections, key=lambda c: len(c.conflict_point_ids)):
        if not c.conflict_point_ids:
            continue
        if len(points | set(c.conflict_point_ids)) <= 8:
            chosen.append(c)
            points |= set(c.conflict_point_ids)
    assert chosen and len(points) <= 8
    sched = ReservationScheduler(intersection)
    start = time.time()
    violations = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 13))
        views = []
        for vid in range(n):
            c = chosen[int(rng.integers(0, len(chosen)))]
            s = float(rng.uniform(c.stop_s - 90.0, c.conflict_distances[-1] + 5.0))
            views.append(VehicleView(vid, c.id, s, float(rng.uniform(0.0, 15.0)), 5.0))
        statuses = sched.reassignment_pass(views)
        owned = {}
        for view in views:
            if statuses[view.id].status != ASSIGNED:
                continue
            conn = intersection.connections[view.connection_id]
            for pid, d in zip(conn.conflict_point_ids, conn.conflict_distances):
                if d < view.s - view.length:
                    continue
                bins = slot_bins(d - view.s, view.v, view.length, sched.config)
                if bins is None:
                    continue
                for b in range(bins[0], bins[1] + 1):
                    if (pid, b) in owned and owned[(pid, b)] != view.id:
                        violations += 1
                    owned[(pid, b)] = view.id
    elapsed = time.time() - start
    report(1, violations == 0 and elapsed < 60.0,
           "0 violations required, got %d; %.1f s (< 60 s)" % (violations, elapsed))
    assert violations == 0
    assert elapsed < 60.0


# --------------------------------------------------------------- criterion 2


class _Oracle:
    """Brute-force bin-snapped interval bookkeeping (dict of cells)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.owner = {}

    def request(self, vid, requests, v, l):
        if v < self.cfg.eps_v:
            return True, set()
        conflicted, occupants, writes = False, set(), []
        for point, dist in requests:
            start = dist / v
            if start > self.cfg.horizon_seconds:
                continue
            end = (dist + l) / v
            if end < 0.0:
                continue
            b0 = int(math.floor(start / self.cfg.bin_duration))
            b1 = max(int(math.ceil(end / self.cfg.bin_duration)) - 1, b0)
            b0 = min(max(b0, 0), self.cfg.horizon_bins - 1)
            b1 = min(max(b1, 0), self.cfg.horizon_bins - 1)
            for b in range(b0, b1 + 1):
                key = (point, b)
                if key in self.owner and self.owner[key] != vid:
                    conflicted = True
                    occupants.add(self.owner[key])
                writes.append(key)
        for key in writes:
            self.owner.setdefault(key, vid)
        return conflicted, occupants


def test_criterion_02_alg_oracle_equivalence():
    """try_reserve conflict decisions match the brute-force oracle on 10,000 cases."""
    cfg = ReservationConfig()
    rng = np.random.default_rng(SEED + 1)
    cases = mismatches = 0
    while cases < 10_000:
        n_points = int(rng.integers(1, 9))
        n_veh = int(rng.integers(1, 7))
        table = ReservationTable(n_points, cfg)
        oracle = _Oracle(cfg)
        lc = set()
        for vid in range(n_veh):
            k = int(rng.integers(1, n_points + 1))
            pts = sorted(rng.choice(n_points, size=k, replace=False).tolist())
            requests = [(int(p), float(rng.uniform(-5.0, 250.0))) for p in pts]
            v = float(rng.uniform(0.0, 15.0))
            l = float(rng.uniform(3.0, 8.0))
            got = try_reserve(table, lc, vid, requests, v, l)
            want = oracle.request(vid, requests, v, l)
            cases += 1
            if got != want:
                mismatches += 1
    report(2, mismatches == 0, "%d cases, %d mismatches (0 allowed)" % (cases, mismatches))
    assert mismatches == 0


# --------------------------------------------------------------- criterion 3


def test_criterion_03_sac_gradient_check():
    """Analytic gradients of all three objectives vs central differences."""
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for batch_idx in range(100):
        hidden = int(rng.choice([8, 16, 32, 64]))
        cfg = SacConfig(hidden=(hidden,), warmup_decisions=0, batch_size=8)
        agent = SacAgent(4, 1, (-0.55, 0.4), cfg, seed=int(rng.integers(0, 1 << 31)))
        batch = {
            "s": rng.normal(size=(8, 4)),
            "a": rng.uniform(-0.55, 0.4, size=(8, 1)),
            "r": rng.normal(size=8),
            "s2": rng.normal(size=(8, 4)),
            "done": (rng.random(8) < 0.3).astype(float),
        }
        eps = rng.standard_normal((8, 1))
        _, grads = agent.gradients(batch, eps)
        target = ("J_V", "v", agent.v_net) if batch_idx % 3 == 0 else (
            ("J_Q1", "q1", agent.q1) if batch_idx % 3 == 1 else ("J_pi", "policy", agent.policy)
        )
        loss_key, grad_key, net = target
        analytic = net.flat_grads(grads[grad_key])
        base = net.flat()
        fd = np.zeros_like(base)
        h = 1e-6
        for i in range(base.size):
            p = base.copy()
            p[i] += h
            net.set_flat(p)
            up = agent.losses(batch, eps)[loss_key]
            p[i] -= 2 * h
            net.set_flat(p)
            dn = agent.losses(batch, eps)[loss_key]
            fd[i] = (up - dn) / (2 * h)
        net.set_flat(base)
        err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, err)
        assert err < 1e-4, "batch %d (%s, hidden %d): rel err %.2e" % (batch_idx, loss_key, hidden, err)
    report(3, worst < 1e-4, "100 batches, worst relative error %.2e (< 1e-4)" % worst)


# --------------------------------------------------------------- criterion 4


@pytest.mark.parametrize("controller_cls", [
    FixedTimeController, LqfController, FcfsVtlController, FcfsPlatoonController,
])
def test_criterion_04_baseline_safety(intersection, controller_cls):
    """Each rule baseline: zero collisions over one simulated hour at 450 veh/lane/h."""
    world = World(intersection, WorldConfig(flow_rate=450.0, hv_fraction=0.8, seed=SEED))
    start = time.time()
    run_controlled(world, controller_cls(intersection), 3600.0)
    elapsed = time.time() - start
    m = compute_metrics(world.events, 3600.0)
    ok = m.collision_count == 0 and elapsed < 300.0
    report(4, ok, "%s: C=%d (need 0), %.0f s wall (< 300 s)" % (
        controller_cls.__name__, m.collision_count, elapsed))
    assert m.collision_count == 0
    assert elapsed < 300.0


# --------------------------------------------------------------- criterion 5


def test_criterion_05_directional_efficiency(intersection):
    """At 450 veh/lane/h, 100% CAV: LQF crossing time beats fixed-time and
    FCFS-VTL by at least 20%."""
    results = {}
    for name, cls in (("lqf", LqfController), ("fixed_time", FixedTimeController),
                      ("fcfs_vtl", FcfsVtlController)):
        world = World(intersection, WorldConfig(flow_rate=450.0, hv_fraction=0.0, seed=SEED))
        run_controlled(world, cls(intersection), 3600.0)
        m = compute_metrics(world.events, 3600.0)
        assert m.t_cross_mean is not None
        results[name] = m.t_cross_mean
    ok = (results["lqf"] <= 0.8 * results["fixed_time"]
          and results["lqf"] <= 0.8 * results["fcfs_vtl"])
    report(5, ok, "t_cross: lqf %.1f s, fixed %.1f s, fcfs %.1f s (lqf <= 80%% of both)" % (
        results["lqf"], results["fixed_time"], results["fcfs_vtl"]))
    assert ok


# ------------------------------------------------------- criteria 6 and 7


TRAIN_SEEDS = (101, 202, 303)


def _train_cell(controller: str, seed: int, out_dir: str) -> dict:
    cfg = ScenarioConfig().desk_scale()
    cfg.controller = controller
    cfg.seed = seed
    cfg.validate()
    inter = build_intersection(cfg.intersection)
    cls = HarlRunner if controller == "harl" else FlatRunner
    runner = cls(
        inter,
        cfg.world_config(),
        params=cfg.harl,
        sac_config=cfg.sac,
        reservation_config=cfg.reservation,
        seed=seed,
        update_every=cfg.train.update_every,
    )
    settings = TrainSettings(
        episodes=cfg.train.episodes,
        episode_seconds=cfg.train.episode_seconds,
        checkpoint_every=cfg.train.checkpoint_every,
        reward_window=cfg.train.reward_window,
    )
    run = TrainingRun(runner, out_dir, settings)
    run.run(resume=True)
    env_steps = settings.episodes * int(settings.episode_seconds / cfg.sim_dt)
    assert env_steps >= 200_000
    ev = runner.run_episode(10_000, 3600.0, train=False)
    m = compute_metrics(ev.events, 3600.0)
    return {
        "collisions": m.collision_count,
        "departures": ev.departures,
        "rewards": {aid: list(log) for aid, log in run.reward_log.items()},
        "window": settings.reward_window,
    }


@pytest.fixture(scope="session")
def trained_cells(tmp_path_factory):
    cache = os.environ.get("HARLSIM_ACCEPT_CACHE")
    base = cache if cache else str(tmp_path_factory.mktemp("accept_train"))
    os.makedirs(base, exist_ok=True)
    out = {}
    for controller in ("harl", "flat_sac"):
        for seed in TRAIN_SEEDS:
            cell_dir = os.path.join(base, "%s_%d" % (controller, seed))
            marker = os.path.join(cell_dir, "result.json")
            if os.path.exists(marker):
                import json

                with open(marker) as fh:
                    out[(controller, seed)] = json.load(fh)
                out[(controller, seed)]["rewards"] = {
                    int(k): v for k, v in out[(controller, seed)]["rewards"].items()
                }
                continue
            result = _train_cell(controller, seed, cell_dir)
            import json

            with open(marker, "w") as fh:
                json.dump(result, fh)
            out[(controller, seed)] = result
    return out


def test_criterion_06_harl_safety_gain(trained_cells):
    """Median trained-HARL collisions over 1 h <= 25% of trained flat SAC's."""
    harl = sorted(trained_cells[("harl", s)]["collisions"] for s in TRAIN_SEEDS)
    flat = sorted(trained_cells[("flat_sac", s)]["collisions"] for s in TRAIN_SEEDS)
    med_harl, med_flat = harl[1], flat[1]
    ok = med_harl <= 0.25 * med_flat
    report(6, ok, "median collisions/h: harl %d vs flat %d (need harl <= %.1f)" % (
        med_harl, med_flat, 0.25 * med_flat))
    assert ok, "harl %r flat %r" % (harl, flat)


def test_criterion_07_learning_signal(trained_cells):
    """Each HARL agent's windowed mean reward: last quartile beats the first,
    median over seeds."""
    details = []
    ok_all = True
    for aid in (1, 2, 3, 4):
        deltas = []
        for seed in TRAIN_SEEDS:
            cell = trained_cells[("harl", seed)]
            log = np.asarray(cell["rewards"][aid], dtype=float)
            window = cell["window"]
            means = [log[i : i + window].mean() for i in range(0, len(log) - window + 1, window)]
            if len(means) < 4:
                # fall back to quartering the raw log when it is short
                q = max(len(log) // 4, 1)
                first, last = log[:q].mean(), log[-q:].mean()
            else:
                q = max(len(means) // 4, 1)
                first, last = float(np.mean(means[:q])), float(np.mean(means[-q:]))
            deltas.append(last - first)
        med = sorted(deltas)[1]
        ok_all = ok_all and med > 0.0
        details.append("agent %d: median gain %.2f" % (aid, med))
    report(7, ok_all, "; ".join(details))
    assert ok_all


# --------------------------------------------------------------- criterion 8


def test_criterion_08_dynamics_clamp(intersection):
    """Every applied speed change obeys the envelope across a mixed full run;
    the world's always-on assertion suite reports zero violations."""
    cfg = ScenarioConfig().desk_scale()
    inter = intersection
    runner = HarlRunner(
        inter, WorldConfig(flow_rate=300.0, hv_fraction=0.5, seed=SEED),
        params=cfg.harl, sac_config=cfg.sac, seed=SEED, update_every=10_000_000,
    )
    world = runner.make_world(0)
    import types

    runner.make_world = types.MethodType(lambda self, ep: world, runner)
    audited = [0]
    orig_step = world.step

    def audit(control=None, hold_ids=None):
        events = orig_step(control, hold_ids)
        for veh in world.vehicles.values():
            assert -1.0 - 1e-9 <= veh.last_dv <= 0.5 + 1e-9
            assert 0.0 <= veh.v <= 15.0
            audited[0] += 1
        return events

    world.step = audit
    runner.run_episode(0, 300.0, train=False)
    report(8, True, "%d vehicle-steps audited, zero envelope violations" % audited[0])
    assert audited[0] > 10_000


# --------------------------------------------------------------- criterion 9


def test_criterion_09_determinism(tmp_path):
    """Identical config + seed produce byte-identical metric CSVs."""
    args = ["eval", "--controller", "lqf", "--flow", "450", "--seed", str(SEED),
            "--duration", "300"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = a == b
    report(9, ok, "metrics.csv byte-identical across two runs (%d bytes)" % len(a))
    assert ok


# -------------------------------------------------------------- criterion 10


def test_criterion_10_reward_tables():
    """Exact enumeration of the step-reward cases and the window sum."""
    cfg = RewardConfig()
    checks = [
        upper_step_reward(True, False, False, cfg) == -1.0,
        upper_step_reward(True, True, False, cfg) == -300.0,
        upper_step_reward(True, False, True, cfg) == 50.0,
        upper_step_reward(False, False, False, cfg) == 0.0,
        lower_reward(AssignmentStatus(CLASH), cfg) == -50.0,
        lower_reward(AssignmentStatus(ASSIGNED), cfg) == 0.0,
        lower_reward(AssignmentStatus(BE_CLASHED), cfg) == 0.0,
        upper_reward([-1.0] * 10) == -10.0,
        upper_reward([-1.0] * 9 + [50.0]) == 41.0,
        upper_reward([0.0] * 7) == 0.0,
    ]
    report(10, all(checks), "%d/%d exact reward-table cases hold" % (sum(checks), len(checks)))
    assert all(checks)
