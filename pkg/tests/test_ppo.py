import math

import numpy as np
import pytest

from aircombat import nn, ppo
from aircombat.curriculum import CurriculumKind, stage
from aircombat.engagement import BLUE, RED
from aircombat.nn import MLP, PolicyParameters
from aircombat.policy import ActorCritic, log_prob, sigmoid
from aircombat.ppo import RolloutBuffer, TrainConfig

SMALL = TrainConfig(batch_size=256, iterations=2, cycles_per_iteration=2)


def synthetic_buffer(episodes):
    """episodes: list of (length, red terminal reward)."""
    cols = {k: [] for k in ("rewards", "dones", "sides", "episodes")}
    for ep, (length, r) in enumerate(episodes):
        for side, reward in ((RED, r), (BLUE, -r)):
            for t in range(length):
                last = t == length - 1
                cols["rewards"].append(reward if last else 0.0)
                cols["dones"].append(last)
                cols["sides"].append(side)
                cols["episodes"].append(ep)
    n = len(cols["rewards"])
    rng = np.random.default_rng(0)
    return RolloutBuffer(
        obs=rng.normal(size=(n, 12)),
        raw=rng.normal(size=(n, 3)),
        fire=np.zeros(n, bool),
        fire_mask=np.zeros(n, bool),
        logp=np.zeros(n),
        values=rng.uniform(-1, 1, n),
        rewards=np.array(cols["rewards"]),
        dones=np.array(cols["dones"]),
        sides=np.array(cols["sides"]),
        episodes=np.array(cols["episodes"]),
    )


def test_returns_equal_terminal_reward():
    buf = synthetic_buffer([(5, 1.0), (3, 0.0), (7, -1.0)])
    ppo.compute_returns_and_advantages(buf, normalize=False)
    for ep, r in enumerate((1.0, 0.0, -1.0)):
        red = (buf.episodes == ep) & (buf.sides == RED)
        blue = (buf.episodes == ep) & (buf.sides == BLUE)
        np.testing.assert_array_equal(buf.returns[red], r)
        np.testing.assert_array_equal(buf.returns[blue], -r)
        assert buf.returns[red].sum() + buf.returns[blue].sum() == 0.0
    np.testing.assert_array_equal(buf.advantages, buf.returns - buf.values)


def test_return_identity_violation_detected():
    buf = synthetic_buffer([(4, 1.0)])
    buf.rewards[0] = 1.0  # a reward before the end breaks the identity
    with pytest.raises(ppo.ReturnIdentityError):
        ppo.compute_returns_and_advantages(buf)
    with pytest.raises(AssertionError):
        ppo.check_sparse_rewards(buf)


def test_unfinished_episode_rejected():
    buf = synthetic_buffer([(4, 1.0)])
    buf.dones[:] = False
    with pytest.raises(ValueError):
        ppo.compute_returns_and_advantages(buf)


def test_advantage_normalization():
    buf = synthetic_buffer([(30, 1.0), (12, -1.0), (20, 0.0)])
    ppo.compute_returns_and_advantages(buf, normalize=True)
    assert abs(buf.advantages.mean()) < 1e-6
    assert abs(buf.advantages.std() - 1.0) < 1e-6


def small_params(seed, dtype=np.float64):
    rng = np.random.default_rng(seed)
    actor = MLP.initialized((12, 6, 4), rng, dtype=dtype)
    critic = MLP.initialized((12, 6, 1), rng, dtype=dtype)
    return PolicyParameters(actor, critic, rng.uniform(-0.5, 0.5, 3).astype(dtype))


def make_batch(params, rng, n=16, ratio_shift=0.0):
    obs = rng.uniform(-1, 1, (n, 12))
    mean, logit, _ = ActorCritic(params).evaluate(obs)
    raw = mean + rng.normal(size=mean.shape)
    fire = rng.random(n) < 0.5
    mask = rng.random(n) < 0.7
    logp = log_prob(mean, params.log_std, logit, raw, fire, mask) - ratio_shift
    return dict(obs=obs, raw=raw, fire=fire, fire_mask=mask, logp=logp,
                advantages=rng.normal(size=n), returns=rng.uniform(-1, 1, n))


def surrogate_pg_loss(params, batch):
    """Plain policy-gradient objective -mean(A * logp), evaluated directly."""
    mean, logit, _ = ActorCritic(params).evaluate(batch["obs"])
    lp = log_prob(mean, params.log_std, logit, batch["raw"], batch["fire"], batch["fire_mask"])
    return -float(np.mean(batch["advantages"] * lp))


def test_ratio_one_gives_plain_policy_gradient():
    params = small_params(1)
    batch = make_batch(params, np.random.default_rng(2))
    cfg = TrainConfig(entropy_coefficient=0.0)
    a_grads, s_grad, _, diag = ppo.ppo_gradients(params, batch, cfg)
    assert diag["policy_loss"] == pytest.approx(-batch["advantages"].mean(), abs=1e-12)
    h = 1e-6
    for p, g in list(zip(params.actor.params, a_grads)) + [(params.log_std, s_grad)]:
        flat = p.reshape(-1)
        for j in range(0, flat.size, 7):
            orig = flat[j]
            flat[j] = orig + h
            up = surrogate_pg_loss(params, batch)
            flat[j] = orig - h
            down = surrogate_pg_loss(params, batch)
            flat[j] = orig
            assert g.reshape(-1)[j] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)


def test_clipped_branch_has_zero_gradient():
    params = small_params(3)
    eps = 0.2
    rng = np.random.default_rng(4)
    batch = make_batch(params, rng, ratio_shift=math.log(1 + 2 * eps))
    batch["advantages"] = np.abs(batch["advantages"]) + 0.1
    a_grads, s_grad, _, diag = ppo.ppo_gradients(params, batch, TrainConfig(entropy_coefficient=0.0, clip_ratio=eps))
    assert diag["policy_loss"] == pytest.approx(-(1 + eps) * batch["advantages"].mean(), rel=1e-12)
    assert diag["clip_fraction"] == 1.0
    for g in a_grads + [s_grad]:
        np.testing.assert_array_equal(g, 0.0)


def bandit(seed, config=TrainConfig(batch_size=2)):
    """One state, two transitions: fire with advantage +1, hold with advantage -1."""
    rng = np.random.default_rng(seed)
    params = PolicyParameters.initialized(12, rng)
    obs = np.repeat(rng.uniform(-1, 1, (1, 12)), 2, axis=0)
    mean, logit, value = ActorCritic(params).evaluate(obs)
    fire, mask = np.array([True, False]), np.array([True, True])
    logp = log_prob(mean, params.log_std, logit, mean, fire, mask)
    buf = RolloutBuffer(obs, mean.copy(), fire, mask, logp, value, np.zeros(2), np.ones(2, bool),
                        np.array([RED, BLUE]), np.zeros(2, int))
    buf.returns, buf.advantages = np.zeros(2), np.array([1.0, -1.0])
    return params, obs, buf, logit[0]


def test_bandit_logit_gradient_hand_value():
    params, obs, buf, logit = bandit(0)
    batch = dict(obs=obs.astype(np.float32), raw=buf.raw, fire=buf.fire, fire_mask=buf.fire_mask, logp=buf.logp,
                 advantages=buf.advantages, returns=buf.returns)
    cfg = TrainConfig(entropy_coefficient=0.0)
    a_grads, _, _, _ = ppo.ppo_gradients(params, batch, cfg)
    # d loss / d logit = -(1/2)(1 - p) - (1/2)(p) = -1/2, whatever p is
    assert a_grads[-1][3] == pytest.approx(-0.5, rel=1e-6)


def test_bandit_update_raises_advantaged_probability():
    for seed in range(10):
        params, obs, buf, logit = bandit(seed)
        ppo.update(params, buf, TrainConfig(batch_size=2), np.random.default_rng(seed))
        assert sigmoid(ActorCritic(params).evaluate(obs)[1][0]) > sigmoid(logit)


def test_update_requires_advantages():
    params, obs, buf, _ = bandit(0)
    buf.advantages = None
    with pytest.raises(ValueError):
        ppo.update(params, buf, TrainConfig(batch_size=2), np.random.default_rng(0))


def _collect(seed):
    rngs = ppo.seed_streams(seed)
    params = PolicyParameters.initialized(12, rngs["init"])
    cfg = TrainConfig(batch_size=128)
    return ppo.collect_cycle(params, stage(CurriculumKind.ANGLE, 0), rngs["engagement"], rngs["action"], cfg)


def test_collection_contract_and_determinism():
    buf, tally = _collect(7)
    again, tally2 = _collect(7)
    for k in ("obs", "raw", "fire", "logp", "values", "rewards", "dones", "sides", "episodes"):
        assert getattr(buf, k).tobytes() == getattr(again, k).tobytes()
    assert tally == tally2
    assert buf.count(RED) >= 128 and buf.count(BLUE) >= 128
    assert tally.episodes == len(np.unique(buf.episodes))
    ppo.check_sparse_rewards(buf)
    assert np.all(np.isfinite(buf.logp))
    ppo.compute_returns_and_advantages(buf)


def test_seed_streams_are_independent_and_reproducible():
    a, b = ppo.seed_streams(3), ppo.seed_streams(3)
    draws = {k: a[k].random() for k in a}
    assert draws == {k: b[k].random() for k in b}
    assert len(set(draws.values())) == len(draws)


def test_smoke_train(tmp_path):
    seen = []
    stats, params = ppo.train(CurriculumKind.NONE, SMALL, seed=0, checkpoint_dir=tmp_path, on_buffer=seen.append)
    assert [s.iteration for s in stats] == [1, 2]
    assert all(s.stage == 0 for s in stats)
    assert len(seen) == 4
    for s in stats:
        assert s.wins + s.losses + s.draws > 0
        assert all(math.isfinite(v) for v in s.diagnostics.values())
    assert params.all_finite()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["final.bin", "model_iter001.bin", "model_iter002.bin"]
    assert nn.serialize(nn.load(tmp_path / "final.bin")) == nn.serialize(params)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(clip_ratio=0.0)
