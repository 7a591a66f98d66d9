"""Self-play PPO with sparse terminal rewards.

One shared policy flies both aircraft. A training run is ``iterations`` x
``cycles_per_iteration`` cycles of collect -> update, with a curriculum
transfer check after every iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .curriculum import CurriculumKind, CurriculumStage, TransferGate, num_stages, should_advance, stage
from .engagement import BLUE, OBS_DIM, RED, Engagement, EngagementConfig, Outcome
from .flightdyn import PhysicsConstants
from .missile import MissileConfig
from .policy import ActorCritic, Policy, raw_to_action, sigmoid, softplus

log = logging.getLogger(__name__)


class PPOUpdateError(FloatingPointError):
    pass


class ReturnIdentityError(AssertionError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 8
    clip_ratio: float = 0.2
    iterations: int = 40
    cycles_per_iteration: int = 20
    entropy_coefficient: float = 0.01
    normalize_advantages: bool = True
    actor_lr: float = 0.002
    critic_lr: float = 0.001
    max_grad_norm: float = 0.5
    envs_per_round: int = 1
    gate: TransferGate = field(default_factory=TransferGate)
    check_invariants: bool = True

    def __post_init__(self):
        for name in ("batch_size", "epochs", "iterations", "cycles_per_iteration", "envs_per_round"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("clip_ratio", "actor_lr", "critic_lr", "max_grad_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_coefficient < 0:
            raise ValueError("entropy_coefficient must be non-negative")


@dataclass
class Tally:
    """Outcome counts from red's point of view."""

    wins: int = 0
    losses: int = 0
    draws: int = 0

    def add(self, outcome) -> None:
        outcome = Outcome(int(outcome))
        if outcome is Outcome.RED_WINS:
            self.wins += 1
        elif outcome is Outcome.BLUE_WINS:
            self.losses += 1
        else:
            self.draws += 1

    def __iadd__(self, other: "Tally") -> "Tally":
        self.wins += other.wins
        self.losses += other.losses
        self.draws += other.draws
        return self

    @property
    def episodes(self) -> int:
        return self.wins + self.losses + self.draws


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    raw: np.ndarray
    fire: np.ndarray
    fire_mask: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    sides: np.ndarray
    episodes: np.ndarray
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    def count(self, side: int) -> int:
        return int(np.sum(self.sides == side))

    @classmethod
    def concatenate(cls, parts: list["RolloutBuffer"]) -> "RolloutBuffer":
        names = ("obs", "raw", "fire", "fire_mask", "logp", "values", "rewards", "dones", "sides", "episodes")
        return cls(**{k: np.concatenate([getattr(p, k) for p in parts]) for k in names})


def _stage_config(base: EngagementConfig, st: CurriculumStage) -> EngagementConfig:
    return base.with_stage(st)


def play_round(
    agent: ActorCritic,
    config: EngagementConfig,
    n: int,
    rng_ic: np.random.Generator,
    rng_act: np.random.Generator,
    missile_config: MissileConfig = MissileConfig(),
    consts: PhysicsConstants = PhysicsConstants(),
    episode_offset: int = 0,
    deterministic: bool = False,
):
    """Run ``n`` self-play engagements to completion; returns (buffer, outcomes)."""
    eng = Engagement.sample(config, rng_ic, n, missile_config=missile_config, consts=consts)
    steps = []
    while not np.all(eng.done):
        live = ~eng.done
        obs_r, obs_b = eng.observations()
        obs = np.concatenate([obs_r, obs_b])
        mask = np.concatenate([eng.can_fire(RED), eng.can_fire(BLUE)])
        raw, fire, logp, value = agent.sample(obs, mask, rng_act, deterministic)
        res = eng.advance(raw_to_action(raw[:n], fire[:n]), raw_to_action(raw[n:], fire[n:]))
        live2 = np.concatenate([live, live])
        idx = np.concatenate([np.arange(n), np.arange(n)])
        steps.append(
            dict(
                obs=obs[live2],
                raw=raw[live2],
                fire=fire[live2],
                fire_mask=mask[live2],
                logp=logp[live2],
                values=value[live2],
                rewards=np.concatenate([res.rewards[:, RED], res.rewards[:, BLUE]])[live2],
                dones=np.concatenate([res.just_done, res.just_done])[live2],
                sides=np.repeat([RED, BLUE], n)[live2],
                episodes=(idx + episode_offset)[live2],
            )
        )
    buf = RolloutBuffer(**{k: np.concatenate([s[k] for s in steps]) for k in steps[0]})
    return buf, eng.outcome.copy()


def collect_cycle(
    params: nn.PolicyParameters,
    current: CurriculumStage,
    rng_ic: np.random.Generator,
    rng_act: np.random.Generator,
    config: TrainConfig = TrainConfig(),
    engagement_config: EngagementConfig = EngagementConfig(),
    missile_config: MissileConfig = MissileConfig(),
    consts: PhysicsConstants = PhysicsConstants(),
):
    """Self-play until each side has at least ``batch_size`` transitions."""
    agent = ActorCritic(params)
    env_config = _stage_config(engagement_config, current)
    parts, tally, n_eps = [], Tally(), 0
    while not parts or min(sum(p.count(RED) for p in parts), sum(p.count(BLUE) for p in parts)) < config.batch_size:
        buf, outcomes = play_round(
            agent, env_config, config.envs_per_round, rng_ic, rng_act, missile_config, consts, episode_offset=n_eps
        )
        n_eps += config.envs_per_round
        for o in outcomes:
            tally.add(o)
        parts.append(buf)
    return RolloutBuffer.concatenate(parts), tally


def _groups(buffer: RolloutBuffer):
    """Index arrays of each (episode, side) trajectory, in time order."""
    key = buffer.episodes.astype(np.int64) * 2 + buffer.sides
    order = np.argsort(key, kind="stable")
    _, starts = np.unique(key[order], return_index=True)
    return np.split(order, starts[1:])


def compute_returns_and_advantages(buffer: RolloutBuffer, normalize: bool = True, check: bool = True) -> RolloutBuffer:
    """Undiscounted returns and ``G - V`` advantages (optionally normalized over the buffer)."""
    returns = np.zeros(len(buffer))
    for g in _groups(buffer):
        if not buffer.dones[g[-1]]:
            raise ValueError("buffer contains an unfinished episode")
        returns[g] = np.cumsum(buffer.rewards[g][::-1])[::-1]
        if check and np.any(returns[g] != buffer.rewards[g[-1]]):
            raise ReturnIdentityError(f"return differs from terminal reward in episode {buffer.episodes[g[0]]}")
    adv = returns - buffer.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    buffer.returns, buffer.advantages = returns, adv
    return buffer


def check_sparse_rewards(buffer: RolloutBuffer) -> None:
    """Rewards are in {-1, 0, 1}, nonzero only on final steps, zero-sum per episode."""
    if not np.all(np.isin(buffer.rewards, (-1.0, 0.0, 1.0))):
        raise AssertionError("reward outside {-1, 0, 1}")
    if np.any(buffer.rewards[~buffer.dones] != 0):
        raise AssertionError("nonzero reward before termination")
    for ep in np.unique(buffer.episodes):
        sel = buffer.episodes == ep
        if np.sum(buffer.rewards[sel]) != 0:
            raise AssertionError(f"episode {ep} terminal rewards are not zero-sum")


def ppo_gradients(params: nn.PolicyParameters, batch: dict, config: TrainConfig):
    """Clipped-surrogate actor gradients and squared-error critic gradients.

    Returns (actor_grads, log_std_grad, critic_grads, diagnostics).
    """
    obs = batch["obs"]
    b = len(obs)
    out, cache = params.actor.forward(obs, return_cache=True)
    out = np.asarray(out, np.float64)
    mean, logit = out[:, :3], out[:, 3]
    log_std = np.asarray(params.log_std, np.float64)
    inv_var = np.exp(-2.0 * log_std)
    diff = batch["raw"] - mean
    mask = batch["fire_mask"].astype(np.float64)
    fire = batch["fire"].astype(np.float64)
    logp = np.sum(-0.5 * diff * diff * inv_var - log_std - 0.5 * np.log(2 * np.pi), axis=1)
    logp += mask * (fire * logit - softplus(logit))

    adv = batch["advantages"]
    ratio = np.exp(logp - batch["logp"])
    eps = config.clip_ratio
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    p = sigmoid(logit)
    ent_fire = softplus(logit) - logit * p
    entropy = float(np.sum(log_std + 0.5 * np.log(2 * np.pi * np.e)) + np.mean(mask * ent_fire))
    c = config.entropy_coefficient

    # d(loss)/d(logp): unclipped branch only
    g_logp = np.where(surr1 <= surr2, -ratio * adv / b, 0.0)
    grad_out = np.empty((b, 4))
    grad_out[:, :3] = g_logp[:, None] * diff * inv_var
    grad_out[:, 3] = g_logp * mask * (fire - p) + (c / b) * mask * logit * p * (1.0 - p)
    actor_grads = params.actor.backward(cache, grad_out)
    log_std_grad = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - c

    v_out, v_cache = params.critic.forward(obs, return_cache=True)
    v = np.asarray(v_out, np.float64)[:, 0]
    err = v - batch["returns"]
    value_loss = 0.5 * np.mean(err * err)
    critic_grads = params.critic.backward(v_cache, (err / b)[:, None])

    diag = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "approx_kl": float(np.mean(batch["logp"] - logp)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return actor_grads, log_std_grad.astype(params.log_std.dtype), critic_grads, diag


class Optimizers:
    """Adam state for the actor (incl. log-std) and the critic."""

    def __init__(self, params: nn.PolicyParameters, config: TrainConfig):
        self.actor = nn.Adam(params.actor.params + [params.log_std], config.actor_lr)
        self.critic = nn.Adam(params.critic.params, config.critic_lr)


def update(
    params: nn.PolicyParameters,
    buffer: RolloutBuffer,
    config: TrainConfig,
    rng_shuffle: np.random.Generator,
    optimizers: Optimizers | None = None,
) -> dict:
    """``epochs`` passes of shuffled minibatches; parameters change in place."""
    if buffer.advantages is None:
        raise ValueError("compute returns and advantages first")
    optimizers = optimizers or Optimizers(params, config)
    data = {
        "obs": buffer.obs.astype(params.actor.dtype),
        "raw": buffer.raw,
        "fire": buffer.fire,
        "fire_mask": buffer.fire_mask,
        "logp": buffer.logp,
        "advantages": buffer.advantages,
        "returns": buffer.returns,
    }
    n = len(buffer)
    history = []
    for _ in range(config.epochs):
        order = rng_shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = {k: v[idx] for k, v in data.items()}
            a_grads, s_grad, c_grads, diag = ppo_gradients(params, batch, config)
            if not all(np.isfinite(v) for v in diag.values()):
                raise PPOUpdateError(f"non-finite loss during update: {diag}")
            a_all, diag["actor_grad_norm"] = nn.clip_grad_norm(a_grads + [s_grad], config.max_grad_norm)
            c_all, diag["critic_grad_norm"] = nn.clip_grad_norm(c_grads, config.max_grad_norm)
            if not optimizers.actor.step(a_all) or not optimizers.critic.step(c_all):
                raise PPOUpdateError(f"non-finite gradients during update: {diag}")
            params.clamp_log_std()
            history.append(diag)
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]}


def play(engagement: Engagement, red: Policy, blue: Policy):
    """Run lockstep engagements to completion with observation-driven policies.

    Returns the per-step reward arrays (list of (N, 2)) and done masks.
    """
    rewards, dones = [], []
    while not np.all(engagement.done):
        obs_r, obs_b = engagement.observations()
        res = engagement.advance(red(obs_r, engagement.can_fire(RED)), blue(obs_b, engagement.can_fire(BLUE)))
        rewards.append(res.rewards)
        dones.append(res.just_done)
    return rewards, dones


def evaluate_outcomes(
    params: nn.PolicyParameters,
    config: EngagementConfig,
    episodes: int,
    rng_ic: np.random.Generator,
    opponent: Policy | None = None,
    missile_config: MissileConfig = MissileConfig(),
    consts: PhysicsConstants = PhysicsConstants(),
) -> np.ndarray:
    """Deterministic (mean-action) evaluation; the agent flies red.

    With ``opponent=None`` blue is a copy of the agent (self-play).
    """
    agent = ActorCritic(params).policy(deterministic=True)
    eng = Engagement.sample(config, rng_ic, episodes, missile_config=missile_config, consts=consts)
    play(eng, agent, opponent or agent)
    return eng.outcome.copy()


@dataclass
class IterationStats:
    iteration: int
    stage: int
    wins: int
    losses: int
    draws: int
    diagnostics: dict = field(default_factory=dict)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named, independent random streams derived from one seed."""
    names = ("init", "engagement", "action", "shuffle", "evaluation")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, children)}


def train(
    kind: CurriculumKind,
    config: TrainConfig,
    seed: int,
    engagement_config: EngagementConfig = EngagementConfig(),
    missile_config: MissileConfig = MissileConfig(),
    consts: PhysicsConstants = PhysicsConstants(),
    checkpoint_dir: Path | None = None,
    on_buffer=None,
):
    """Train one policy under a curriculum; returns (per-iteration stats, final parameters).

    ``on_buffer`` is called with every processed buffer (used by checks).
    """
    rngs = seed_streams(seed)
    params = nn.PolicyParameters.initialized(OBS_DIM, rngs["init"])
    optimizers = Optimizers(params, config)
    stage_index = 0
    stats = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    for it in range(config.iterations):
        current = stage(kind, stage_index)
        tally = Tally()
        diags = []
        for _ in range(config.cycles_per_iteration):
            buf, t = collect_cycle(
                params, current, rngs["engagement"], rngs["action"], config, engagement_config, missile_config, consts
            )
            tally += t
            compute_returns_and_advantages(buf, config.normalize_advantages, check=config.check_invariants)
            if config.check_invariants:
                check_sparse_rewards(buf)
                if t.episodes != len(np.unique(buf.episodes)):
                    raise AssertionError("outcome tally does not partition the collected episodes")
            if on_buffer is not None:
                on_buffer(buf)
            diags.append(update(params, buf, config, rngs["shuffle"], optimizers))
        diag = {k: float(np.mean([d[k] for d in diags])) for k in diags[0]}
        stats.append(IterationStats(it + 1, stage_index, tally.wins, tally.losses, tally.draws, diag))
        log.info(
            "%s seed=%d iter=%d stage=%d W/L/D=%d/%d/%d",
            kind.abbrev, seed, it + 1, stage_index, tally.wins, tally.losses, tally.draws,
        )
        if checkpoint_dir is not None:
            nn.save(params, checkpoint_dir / f"model_iter{it + 1:03d}.bin")
        if num_stages(kind) > 1 and not current.is_last:
            outcomes = evaluate_outcomes(
                params,
                _stage_config(engagement_config, current),
                config.gate.eval_episodes,
                rngs["evaluation"],
                missile_config=missile_config,
                consts=consts,
            )
            if should_advance(config.gate, outcomes, current):
                stage_index += 1
    if checkpoint_dir is not None:
        nn.save(params, checkpoint_dir / "final.bin")
    return stats, params
