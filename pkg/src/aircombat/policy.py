"""Action distribution of the learned agent and scripted opponents.

The actor emits four numbers per observation: the means of three Gaussian
"raw" controls and a fire logit. Each raw control is clipped to [-1, 1] and
mapped piecewise-linearly onto its limits so that raw 0 is wings-level
1 g flight (nx=0, nz=1, mu=0); the fire logit parameterizes a Bernoulli
launch request.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .engagement import Action
from .flightdyn import MU_BOUNDS, NX_BOUNDS, NZ_BOUNDS
from .nn import N_CONTINUOUS, PolicyParameters

CONTROL_LOW = np.array([NX_BOUNDS[0], NZ_BOUNDS[0], MU_BOUNDS[0]])
CONTROL_HIGH = np.array([NX_BOUNDS[1], NZ_BOUNDS[1], MU_BOUNDS[1]])
CONTROL_NEUTRAL = np.array([0.0, 1.0, 0.0])
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)

# (observations (N, 12), launch permitted (N,)) -> Action
Policy = Callable[[np.ndarray, np.ndarray], Action]


def raw_to_action(raw: np.ndarray, fire: np.ndarray) -> Action:
    r = np.clip(raw, -1.0, 1.0)
    span = np.where(r >= 0.0, CONTROL_HIGH - CONTROL_NEUTRAL, CONTROL_NEUTRAL - CONTROL_LOW)
    ctrl = CONTROL_NEUTRAL + span * r
    return Action(ctrl[:, 0], ctrl[:, 1], ctrl[:, 2], np.asarray(fire, dtype=bool))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_prob(mean, log_std, logit, raw, fire, fire_mask):
    """Joint log-probability of (raw controls, fire) per row.

    The Bernoulli term only counts where a launch was actually possible.
    """
    mean = np.asarray(mean, np.float64)
    log_std = np.asarray(log_std, np.float64)
    z = (np.asarray(raw, np.float64) - mean) * np.exp(-log_std)
    lp = np.sum(-0.5 * z * z - log_std - LOG_SQRT_2PI, axis=-1)
    logit = np.asarray(logit, np.float64)
    lp_fire = np.asarray(fire, np.float64) * logit - softplus(logit)
    return lp + np.asarray(fire_mask, np.float64) * lp_fire


class ActorCritic:
    """Callable wrapper around :class:`PolicyParameters` for acting."""

    def __init__(self, params: PolicyParameters):
        self.params = params

    def evaluate(self, obs: np.ndarray):
        out = np.asarray(self.params.actor(obs), np.float64)
        value = np.asarray(self.params.critic(obs), np.float64)[:, 0]
        return out[:, :N_CONTINUOUS], out[:, N_CONTINUOUS], value

    def sample(self, obs, fire_mask, rng: np.random.Generator, deterministic: bool = False):
        """Draw actions; returns (raw, fire, logp, value)."""
        mean, logit, value = self.evaluate(obs)
        log_std = np.asarray(self.params.log_std, np.float64)
        if deterministic:
            raw = mean.copy()
            fire = logit > 0.0
        else:
            raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
            fire = rng.random(len(logit)) < sigmoid(logit)
        fire = fire & np.asarray(fire_mask, bool)
        logp = log_prob(mean, log_std, logit, raw, fire, fire_mask)
        return raw, fire, logp, value

    def policy(self, rng: np.random.Generator | None = None, deterministic: bool = True) -> Policy:
        def act(obs, fire_mask):
            raw, fire, _, _ = self.sample(obs, fire_mask, rng, deterministic)
            return raw_to_action(raw, fire)

        return act


def straight_line(obs, fire_mask) -> Action:
    """Constant speed, wings level, never fires."""
    n = len(obs)
    gamma = obs[:, 2] * (math.pi / 2)
    return Action(np.sin(gamma), np.cos(gamma), np.zeros(n), np.zeros(n, bool))


def pure_pursuit(obs, fire_mask) -> Action:
    """Bank toward the radar bearing of the opponent and launch when permitted.

    Flies straight when the opponent is not on radar. The bank command is an
    odd function of the bearing, so mirrored geometries give mirrored flight.
    """
    azimuth = obs[:, 3] * math.pi
    elevation = obs[:, 4] * math.pi
    mu = np.clip(2.0 * azimuth, -1.2, 1.2)
    nz = np.clip(1.0 + 4.0 * np.abs(azimuth) + 2.0 * elevation, 0.0, 8.0)
    return Action(np.full(len(obs), 1.0), nz, mu, np.asarray(fire_mask, bool).copy())


def random_maneuver(rng: np.random.Generator, fire_prob: float = 0.1) -> Policy:
    """Uniformly random controls within the limits; random launch requests."""

    def act(obs, fire_mask):
        n = len(obs)
        raw = rng.uniform(-1.0, 1.0, size=(n, N_CONTINUOUS))
        fire = (rng.random(n) < fire_prob) & np.asarray(fire_mask, bool)
        return raw_to_action(raw, fire)

    return act


SCRIPTED = {
    "straight-line": lambda rng: straight_line,
    "pure-pursuit": lambda rng: pure_pursuit,
    "random-maneuver": lambda rng: random_maneuver(rng),
}


def scripted(name: str, rng: np.random.Generator | None = None) -> Policy:
    try:
        return SCRIPTED[name](rng if rng is not None else np.random.default_rng(0))
    except KeyError:
        raise ValueError(f"unknown scripted opponent {name!r}; choose from {', '.join(SCRIPTED)}") from None
