"""End-to-end acceptance checks, one test per criterion.

Each test reports a PASS/FAIL line in the terminal summary (see conftest.py).
"""

import csv
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from aircombat import cli, harness, ppo
from aircombat import engagement as eg
from aircombat import flightdyn as fd
from aircombat import missile as ms
from aircombat.curriculum import CurriculumKind, num_stages, stage
from aircombat.engagement import Action, Engagement, EngagementConfig, Outcome, Reason
from aircombat.flightdyn import AircraftState, ControlInput, PhysicsConstants
from aircombat.missile import MissileConfig, MissileState, MissReason, Phase, Status
from aircombat.nn import MLP, PolicyParameters
from aircombat.policy import ActorCritic, log_prob, pure_pursuit, random_maneuver, sigmoid
from aircombat.ppo import RolloutBuffer, TrainConfig

from oracles import fine_euler, point_mass_rates, relative_state_error


def test_criterion_01_dynamics_fidelity(criterion):
    with criterion(1, "RK4 matches fine-step Euler over 10 s within 1e-5") as notes:
        start_clock = time.perf_counter()
        rng = np.random.default_rng(2024)
        n = 2000
        cand = np.column_stack(
            [rng.uniform(-1e4, 1e4, n), rng.uniform(-1e4, 1e4, n), rng.uniform(3e3, 1e4, n),
             rng.uniform(250, 400, n), rng.uniform(-0.5, 0.5, n), rng.uniform(-np.pi, np.pi, n)]
        )
        ctrl = np.column_stack([rng.uniform(-1, 2, n), rng.uniform(0, 8, n), rng.uniform(-np.pi, np.pi, n)])
        # keep pairs whose unclamped solution stays clear of the gamma = +-pi/2 singularity
        s, ok = AircraftState.from_array(cand), np.ones(n, bool)
        c = ControlInput(*ctrl.T)
        for _ in range(500):
            s = fd.rk4(s, c, 0.02)
            ok &= (np.abs(s.gamma) < 1.4) & (s.v > 50.0)
        idx = np.flatnonzero(ok)[:500]
        assert len(idx) == 500
        start, ctrl = cand[idx], ctrl[idx]
        got = fd.integrate(AircraftState.from_array(start), ControlInput(*ctrl.T), 10.0, clamp=False).as_array()
        ref = fine_euler(start, *ctrl.T, 10.0, dt=1e-5)
        err = relative_state_error(got, ref, start).max(axis=0)
        elapsed = time.perf_counter() - start_clock
        notes.append("max rel err per component " + ", ".join(f"{e:.1e}" for e in err))
        notes.append(f"{elapsed:.0f} s")
        assert np.all(err < 1e-5)
        assert elapsed < 60.0


def test_criterion_02_equation_transcription(criterion):
    with criterion(2, "derivatives equal a second transcription to 0 ulp") as notes:
        rng = np.random.default_rng(7)
        n = 10_000
        state = AircraftState(rng.uniform(-2e5, 2e5, n), rng.uniform(-2e5, 2e5, n), rng.uniform(0, 2e4, n),
                              rng.uniform(250, 400, n), rng.uniform(-1.48, 1.48, n), rng.uniform(-np.pi, np.pi, n))
        ctrl = ControlInput(rng.uniform(-1, 2, n), rng.uniform(0, 8, n), rng.uniform(-np.pi, np.pi, n))
        got = fd.derivatives(state, ctrl)
        ref = point_mass_rates(state.x, state.y, state.z, state.v, state.gamma, state.psi, ctrl.nx, ctrl.nz, ctrl.mu)
        mismatches = sum(int(np.sum(a != b)) for a, b in zip(got, ref))
        notes.append(f"{mismatches} differing values of {6 * n}")
        assert mismatches == 0


def _aircraft(x, y, z, v=300.0, psi=0.0):
    return AircraftState(*(np.atleast_1d(np.asarray(a, float)) for a in (x, y, z, v, 0.0, psi)))


def _flying(pos, vel, t=10.0, phase=Phase.MIDCOURSE):
    return MissileState(np.atleast_2d(np.asarray(pos, float)), np.atleast_2d(np.asarray(vel, float)), np.array([t]),
                        np.array([phase], np.int8), np.array([Status.IN_FLIGHT], np.int8), np.array([np.inf]),
                        np.array([MissReason.NONE], np.int8))


def _hit_at(offset):
    cfg = replace(MissileConfig(), nav_constant=1e-12)  # no steering: closest approach = offset
    target = _aircraft(0, 0, 8000, v=0.0)
    out = ms.step_and_adjudicate(_flying([-10.0, offset, 8000], [1000.0, 0, 0]), _aircraft(-2e4, 0, 8000),
                                 target, target, cfg, 0.02)
    return out.status[0]


def _timeout_after(t_end):
    target = _aircraft(60_000, 0, 8000)
    out = ms.step_and_adjudicate(_flying([0, 0, 8000], [800.0, 0, 0], t=t_end - 0.02), _aircraft(-1000, 0, 8000),
                                 target, target, MissileConfig(), 0.02)
    return out.status[0]


def _midcourse(bearing):
    target = _aircraft(5e4 * math.cos(bearing), 5e4 * math.sin(bearing), 8000)
    out = ms.step_and_adjudicate(_flying([5000.0, 5000.0, 8000], [600.0, 600.0, 0]), _aircraft(0, 0, 8000),
                                 target, target, MissileConfig(), 0.02)
    return out.status[0]


def _terminal(bearing):
    target = _aircraft(1e4 * math.cos(bearing), 1e4 * math.sin(bearing), 8000)
    out = ms.step_and_adjudicate(_flying([0, 0, 8000], [1000.0, 0, 0], phase=Phase.TERMINAL),
                                 _aircraft(-3e4, 0, 8000), target, target, MissileConfig(), 0.02)
    return out.status[0]


def _sim_done_at(t):
    consts = PhysicsConstants(dt_physics=0.01, dt_decision=0.01)
    eng = Engagement(_aircraft(0, 0, 8000, psi=math.pi), _aircraft(150_000, 0, 8000), consts=consts)
    eng.time[:] = t - 0.01
    eng.advance(Action.hold(1), Action.hold(1))
    return bool(eng.done[0]), Reason(int(eng.reason[0]))


def test_criterion_03_engagement_thresholds(criterion):
    with criterion(3, "five engagement thresholds hold at boundary +-0.01") as notes:
        checks = {
            "hit 11.99 m": _hit_at(11.99) == Status.HIT,
            "no hit 12.01 m": _hit_at(12.01) != Status.HIT,
            "in flight at 119.99 s": _timeout_after(119.99) == Status.IN_FLIGHT,
            "missed at 120.01 s": _timeout_after(120.01) == Status.MISSED,
            "midcourse pi/3-0.01 kept": _midcourse(math.pi / 3 - 0.01) == Status.IN_FLIGHT,
            "midcourse pi/3+0.01 lost": _midcourse(math.pi / 3 + 0.01) == Status.MISSED,
            "terminal pi/2-0.01 kept": _terminal(math.pi / 2 - 0.01) == Status.IN_FLIGHT,
            "terminal pi/2+0.01 lost": _terminal(math.pi / 2 + 0.01) == Status.MISSED,
            "running at 199.99 s": _sim_done_at(199.99) == (False, Reason.NONE),
            "timeout at 200.00 s": _sim_done_at(200.0) == (True, Reason.TIMEOUT),
        }
        failed = [k for k, v in checks.items() if not v]
        notes.append(f"{len(checks) - len(failed)}/{len(checks)} boundary cases")
        assert not failed, failed


def test_criterion_04_sparse_reward_contract(criterion):
    with criterion(4, "1000 random-policy episodes: sparse, zero-sum rewards; tallies partition") as notes:
        tally = ppo.Tally()
        # 500 episodes with uniformly random manoeuvres
        eng = Engagement.sample(EngagementConfig(), np.random.default_rng(1), 500)
        rewards, dones = ppo.play(eng, random_maneuver(np.random.default_rng(2)), random_maneuver(np.random.default_rng(3)))
        ended_at = np.zeros(500, int)
        for k, (r, d) in enumerate(zip(rewards, dones)):
            assert np.all(r[~d] == 0.0)
            assert np.all(r.sum(axis=1) == 0.0)
            assert np.all(np.isin(r, (-1.0, 0.0, 1.0)))
            ended_at[d] += 1
        assert np.all(ended_at == 1)
        for o in eng.outcome:
            tally.add(o)
        # 500 episodes with a freshly initialised stochastic network
        params = PolicyParameters.initialized(12, np.random.default_rng(4))
        buf, outcomes = ppo.play_round(ActorCritic(params), EngagementConfig(), 500, np.random.default_rng(5),
                                       np.random.default_rng(6))
        ppo.check_sparse_rewards(buf)
        assert len(np.unique(buf.episodes)) == 500
        for o in outcomes:
            tally.add(o)
        notes.append(f"W/L/D {tally.wins}/{tally.losses}/{tally.draws}")
        assert tally.episodes == 1000


def test_criterion_05_curriculum_tables(criterion):
    with criterion(5, "curriculum tables exact and nested") as notes:
        count = 0
        for k in range(10):
            a, d, h = (stage(kind, k) for kind in (CurriculumKind.ANGLE, CurriculumKind.DISTANCE, CurriculumKind.HYBRID))
            assert (a.azimuth_half_width, a.distance_interval) == ((k + 1) * math.pi / 10, (50_000.0, 150_000.0))
            assert (d.azimuth_half_width, d.distance_interval) == (math.pi, (50_000.0, 50_000.0 + 10_000.0 * (k + 1)))
            assert (h.azimuth_half_width, h.distance_interval) == ((k + 1) * math.pi / 10, (50_000.0, 50_000.0 + 10_000.0 * (k + 1)))
            count += 3
        for kind in CurriculumKind:
            rows = [stage(kind, i) for i in range(num_stages(kind))]
            for lo, hi in zip(rows, rows[1:]):
                assert lo.azimuth_half_width <= hi.azimuth_half_width
                assert hi.distance_interval[0] <= lo.distance_interval[0] <= lo.distance_interval[1] <= hi.distance_interval[1]
        notes.append(f"{count} stage rows")
        assert count == 30


def _fd_grads(net, x, c, h=1e-4):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        flat, gf = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(np.sum(c * net(x)))
            flat[j] = orig - h
            down = float(np.sum(c * net(x)))
            flat[j] = orig
            gf[j] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_criterion_06_gradient_check(criterion):
    with criterion(6, "backprop matches central differences on 50 networks") as notes:
        rng = np.random.default_rng(11)
        shapes = [(12, 256, 256, 4), (12, 256, 256, 1)]
        shapes += [tuple(int(v) for v in rng.integers(1, 9, size=rng.integers(2, 5))) for _ in range(48)]
        worst = 0.0
        for sizes in shapes:
            net = MLP.initialized(sizes, rng, dtype=np.float64)
            for b in net.biases:
                b[:] = rng.normal(0, 0.3, b.shape)
            x = rng.uniform(-1, 1, (2, sizes[0]))
            c = rng.normal(size=(2, sizes[-1]))
            _, cache = net(x, return_cache=True)
            analytic = net.backward(cache, c)
            numeric = _fd_grads(net, x, c)
            # relative error, denominators floored at 1e-6 where both gradients vanish
            for a, f in zip(analytic, numeric):
                worst = max(worst, float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6))))
        notes.append(f"{len(shapes)} nets, worst relative error {worst:.1e}")
        assert worst < 1e-4


def test_criterion_07_return_identity(criterion):
    with criterion(7, "every return equals its episode's terminal reward") as notes:
        checked = []

        def verify(buf):
            for ep in np.unique(buf.episodes):
                for side in (eg.RED, eg.BLUE):
                    sel = (buf.episodes == ep) & (buf.sides == side)
                    terminal = buf.rewards[sel][-1]
                    assert buf.dones[sel][-1] and not buf.dones[sel][:-1].any()
                    assert np.all(buf.returns[sel] == terminal)
            checked.append(len(buf))

        cfg = TrainConfig(batch_size=256, iterations=2, cycles_per_iteration=2)
        for kind in (CurriculumKind.ANGLE, CurriculumKind.NONE):
            ppo.train(kind, cfg, seed=5, on_buffer=verify)
        notes.append(f"{len(checked)} buffers, {sum(checked)} transitions")
        assert len(checked) == 8


def _bandit_update(seed):
    rng = np.random.default_rng(seed)
    params = PolicyParameters.initialized(12, rng)
    obs = np.repeat(rng.uniform(-1, 1, (1, 12)), 2, axis=0)
    mean, logit, value = ActorCritic(params).evaluate(obs)
    fire, mask = np.array([True, False]), np.array([True, True])
    buf = RolloutBuffer(obs, mean.copy(), fire, mask, log_prob(mean, params.log_std, logit, mean, fire, mask), value,
                        np.zeros(2), np.ones(2, bool), np.array([eg.RED, eg.BLUE]), np.zeros(2, int))
    buf.returns, buf.advantages = np.zeros(2), np.array([1.0, -1.0])
    before = sigmoid(logit[0])
    ppo.update(params, buf, TrainConfig(batch_size=2), np.random.default_rng(seed))
    return before, sigmoid(ActorCritic(params).evaluate(obs)[1][0])


def test_criterion_08_bandit_improvement(criterion):
    with criterion(8, "one PPO update favours the advantaged action") as notes:
        results = [_bandit_update(seed) for seed in range(100)]
        improved = sum(after > before for before, after in results)
        notes.append(f"{improved}/100 initialisations")
        assert improved == 100


def test_criterion_09_determinism(criterion, tmp_path):
    with criterion(9, "deterministic train runs are byte-identical") as notes:
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            argv = ["train", "--curriculum", "angle", "--seeds", "3", "--iterations", "2", "--cycles", "2",
                    "--batch-size", "128", "--out", str(out), "--deterministic"]
            assert cli.main(argv) == 0
            outs.append(out)
        files = ["raw_AC.csv", "aggregate.csv", "AC/seed3/final.bin", "AC/seed3/model_iter001.bin"]
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
        notes.append(f"{len(files)} files compared")


def test_criterion_10_desk_scale_sweep(criterion, tmp_path):
    with criterion(10, "4 methods x 2 seeds x 5 iterations x 5 cycles under 30 min") as notes:
        train_cfg = TrainConfig(batch_size=256, iterations=5, cycles_per_iteration=5, check_invariants=True)
        cfg = harness.ExperimentConfig(kinds=list(CurriculumKind), seeds=[0, 1], train=train_cfg, out=tmp_path)
        t0 = time.perf_counter()
        result = harness.run_experiment(cfg)
        elapsed = time.perf_counter() - t0
        notes.append(f"{elapsed / 60:.1f} min")
        assert not result["failures"], result["failures"]
        assert elapsed < 30 * 60

        with open(result["aggregate"], newline="") as fh:
            reader = csv.reader(fh)
            assert tuple(next(reader)) == harness.AGGREGATE_COLUMNS
        rows = harness.read_aggregate(result["aggregate"])
        assert len(rows) == 4 * 5 and all(r["seeds"] == 2 for r in rows)
        for kind in CurriculumKind:
            recs = harness.read_records(tmp_path / f"raw_{kind.abbrev}.csv")
            assert len(recs) == 10 and all(r.episodes > 0 for r in recs)
            if kind is CurriculumKind.NONE:
                assert all(r.stage == 0 for r in recs)

        def decisive(method):
            r = next(r for r in rows if r["method"] == method and r["iteration"] == 5)
            return (r["win_mean"] + r["loss_mean"]) / (r["win_mean"] + r["loss_mean"] + r["draw_mean"])

        ac, nc = decisive("AC"), decisive("NC")
        notes.append(f"iteration-5 decisive rate AC {ac:.2f} vs NC {nc:.2f} ({'AC higher' if ac > nc else 'AC not higher'}, informational)")


def _reflect(s):
    return replace(s, y=-s.y, psi=fd.wrap_angle(-s.psi))


def test_criterion_11_mirror_symmetry(criterion):
    with criterion(11, "mirrored, side-swapped engagements mirror exactly") as notes:
        cfg = EngagementConfig().with_stage(stage(CurriculumKind.ANGLE, 2))
        red, blue = eg.sample_initial(cfg, np.random.default_rng(21), 100)
        a = Engagement(red, blue)
        b = Engagement(_reflect(blue), _reflect(red))
        worst = 0.0
        while not np.all(a.done):
            oa, ob = a.observations(), b.observations()
            a.advance(pure_pursuit(oa[0], a.can_fire(eg.RED)), pure_pursuit(oa[1], a.can_fire(eg.BLUE)))
            b.advance(pure_pursuit(ob[0], b.can_fire(eg.RED)), pure_pursuit(ob[1], b.can_fire(eg.BLUE)))
            for p, q in ((a.red, b.blue), (a.blue, b.red)):
                mirrored = q.position() * np.array([1.0, -1.0, 1.0])
                worst = max(worst, float(np.abs(p.position() - mirrored).max()))
        assert np.all(b.done)
        swap = {Outcome.RED_WINS: Outcome.BLUE_WINS, Outcome.BLUE_WINS: Outcome.RED_WINS, Outcome.DRAW: Outcome.DRAW}
        swapped = sum(swap[Outcome(int(x))] == Outcome(int(y)) for x, y in zip(a.outcome, b.outcome))
        notes.append(f"max position error {worst:.1e} m, {swapped}/100 outcomes swapped")
        assert worst < 1e-6
        assert swapped == 100
