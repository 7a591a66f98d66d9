"""Two-aircraft engagement: initial conditions, observations, stepping, outcome.

An :class:`Engagement` runs N independent engagements in lockstep. Red and
blue aircraft live in one stacked :class:`AircraftState` of length 2N (red
first) so both sides go through exactly the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from . import flightdyn as fd
from .flightdyn import AircraftState, ControlInput, PhysicsConstants
from .missile import (
    HIT,
    IDLE,
    IN_FLIGHT,
    MISSED,
    TERMINAL,
    MissileConfig,
    MissileState,
    Phase,
    Status,
    angle_between,
    dot,
    launch,
    norm,
    step_and_adjudicate,
)

OBS_DIM = 12
RED, BLUE = 0, 1
SIDE_NAMES = ("red", "blue")


class Outcome(IntEnum):
    NONE = -1
    RED_WINS = 0
    BLUE_WINS = 1
    DRAW = 2


class Reason(IntEnum):
    NONE = -1
    HIT = 0
    BOTH_MISSED = 1
    TIMEOUT = 2
    GROUND_CONTACT = 3


class EngagementOver(RuntimeError):
    pass


@dataclass(frozen=True)
class EngagementConfig:
    max_sim_time: float = 200.0
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)
    distance_range: tuple[float, float] = (50_000.0, 150_000.0)
    altitude_range: tuple[float, float] = (3_000.0, 10_000.0)
    speed_range: tuple[float, float] = (250.0, 400.0)
    radar_azimuth_limit: float = math.pi / 3
    radar_range: float = 80_000.0

    def __post_init__(self):
        if self.max_sim_time <= 0:
            raise ValueError("max_sim_time must be positive")
        for name in ("azimuth_range", "distance_range", "altitude_range", "speed_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if not 0 < self.radar_azimuth_limit <= math.pi:
            raise ValueError("radar_azimuth_limit must lie in (0, pi]")
        if self.radar_range <= 0:
            raise ValueError("radar_range must be positive")

    def with_stage(self, stage) -> "EngagementConfig":
        """Copy with the azimuth/distance intervals of a curriculum stage."""
        hw = stage.azimuth_half_width
        return replace(self, azimuth_range=(-hw, hw), distance_range=tuple(stage.distance_interval))


@dataclass
class Action:
    """Per-side action batch: continuous controls plus a fire request."""

    nx: np.ndarray
    nz: np.ndarray
    mu: np.ndarray
    fire: np.ndarray

    def control(self) -> ControlInput:
        return ControlInput(np.asarray(self.nx, float), np.asarray(self.nz, float), np.asarray(self.mu, float)).clipped()

    @classmethod
    def hold(cls, n: int, fire: bool = False) -> "Action":
        """Straight and level with zero flight-path angle: nx=0, nz=1, mu=0."""
        return cls(np.zeros(n), np.ones(n), np.zeros(n), np.full(n, fire))


def sample_initial(config: EngagementConfig, rng: np.random.Generator, n: int = 1):
    """Draw N initial geometries; returns (red, blue) states.

    Red sits over the origin, blue at the sampled distance along +x. Each side's
    heading is chosen so that the opponent appears at its own sampled bearing.
    """
    d = rng.uniform(*config.distance_range, size=n)
    theta_red = rng.uniform(*config.azimuth_range, size=n)
    theta_blue = rng.uniform(*config.azimuth_range, size=n)
    alt = rng.uniform(*config.altitude_range, size=(2, n))
    speed = rng.uniform(*config.speed_range, size=(2, n))
    zeros = np.zeros(n)
    red = AircraftState(zeros, zeros.copy(), alt[0], speed[0], zeros.copy(), fd.wrap_angle(-theta_red))
    blue = AircraftState(d, zeros.copy(), alt[1], speed[1], zeros.copy(), fd.wrap_angle(math.pi - theta_blue))
    return red, blue


def horizontal_bearing(own: AircraftState, other: AircraftState):
    """Signed angle from own heading to the horizontal line of sight, in (-pi, pi]."""
    return fd.wrap_angle(np.arctan2(other.y - own.y, other.x - own.x) - own.psi)


def _relative(own: AircraftState, opp: AircraftState):
    los = opp.position() - own.position()
    rng = norm(los)
    off_boresight = angle_between(own.velocity(), los)
    return los, rng, off_boresight


def in_radar_cone(own: AircraftState, opp: AircraftState, config: EngagementConfig) -> np.ndarray:
    _, rng, off = _relative(own, opp)
    return (off <= config.radar_azimuth_limit) & (rng <= config.radar_range)


def build_observation(
    own: AircraftState,
    opp: AircraftState,
    own_missile: MissileState,
    incoming_missile: MissileState,
    config: EngagementConfig,
) -> np.ndarray:
    """Normalized 12-component observation per engagement, shape (N, 12).

    Layout: speed, altitude, flight-path angle, opponent azimuth, elevation,
    range, range rate, aspect, missile remaining, missile in flight, missile
    terminal, incoming missile warning. Opponent fields (3..7) are zero when the
    opponent is outside the radar cone.
    """
    los, rng, off = _relative(own, opp)
    seen = (off <= config.radar_azimuth_limit) & (rng <= config.radar_range)
    horiz = np.hypot(los[..., 0], los[..., 1])
    azimuth = fd.wrap_angle(np.arctan2(los[..., 1], los[..., 0]) - own.psi)
    elevation = np.arctan2(los[..., 2], horiz) - own.gamma
    closing = dot(los, opp.velocity() - own.velocity()) / np.maximum(rng, 1e-9)
    aspect = fd.wrap_angle(np.arctan2(-los[..., 1], -los[..., 0]) - opp.psi)

    n = len(np.atleast_1d(rng))
    obs = np.zeros((n, OBS_DIM))
    obs[:, 0] = (np.asarray(own.v) - 325.0) / 75.0
    obs[:, 1] = np.asarray(own.z) / 5000.0 - 1.0
    obs[:, 2] = np.asarray(own.gamma) / (math.pi / 2)
    obs[:, 3] = np.where(seen, azimuth / math.pi, 0.0)
    obs[:, 4] = np.where(seen, elevation / math.pi, 0.0)
    obs[:, 5] = np.where(seen, rng / config.radar_range, 0.0)
    obs[:, 6] = np.where(seen, closing / 1500.0, 0.0)
    obs[:, 7] = np.where(seen, aspect / math.pi, 0.0)
    obs[:, 8] = own_missile.status == IDLE
    obs[:, 9] = own_missile.status == IN_FLIGHT
    obs[:, 10] = (own_missile.status == IN_FLIGHT) & (own_missile.phase == TERMINAL)
    obs[:, 11] = (incoming_missile.status == IN_FLIGHT) & (incoming_missile.phase == TERMINAL)
    return np.clip(obs, -1.0, 1.0)


def _concat(a: AircraftState, b: AircraftState) -> AircraftState:
    return AircraftState.from_array(np.concatenate([np.atleast_2d(a.as_array()), np.atleast_2d(b.as_array())]))


@dataclass
class StepResult:
    rewards: np.ndarray  # (N, 2), red then blue
    done: np.ndarray  # engagement finished (now or earlier)
    just_done: np.ndarray  # finished during this call


@dataclass
class Engagement:
    """N engagements advanced in lockstep, one decision interval per call."""

    red: AircraftState
    blue: AircraftState
    config: EngagementConfig = field(default_factory=EngagementConfig)
    missile_config: MissileConfig = field(default_factory=MissileConfig)
    consts: PhysicsConstants = field(default_factory=PhysicsConstants)

    def __post_init__(self):
        self.red = AircraftState.from_array(np.atleast_2d(self.red.as_array()))
        self.blue = AircraftState.from_array(np.atleast_2d(self.blue.as_array()))
        n = len(self.red.x)
        self.n = n
        self.missiles = [MissileState.idle(n), MissileState.idle(n)]
        self.time = np.zeros(n)
        self.steps = np.zeros(n, dtype=np.int64)
        self.done = np.zeros(n, dtype=bool)
        self.outcome = np.full(n, Outcome.NONE, dtype=np.int8)
        self.reason = np.full(n, Reason.NONE, dtype=np.int8)

    @classmethod
    def sample(cls, config: EngagementConfig, rng: np.random.Generator, n: int = 1, **kw) -> "Engagement":
        red, blue = sample_initial(config, rng, n)
        return cls(red, blue, config, **kw)

    def aircraft(self, side: int) -> AircraftState:
        return self.red if side == RED else self.blue

    def observations(self) -> tuple[np.ndarray, np.ndarray]:
        """(red observations, blue observations), each (N, 12)."""
        m = self.missiles
        return (
            build_observation(self.red, self.blue, m[RED], m[BLUE], self.config),
            build_observation(self.blue, self.red, m[BLUE], m[RED], self.config),
        )

    def can_fire(self, side: int) -> np.ndarray:
        own, opp = (self.red, self.blue) if side == RED else (self.blue, self.red)
        return (self.missiles[side].status == IDLE) & in_radar_cone(own, opp, self.config) & ~self.done

    def max_steps(self) -> int:
        return math.ceil(self.config.max_sim_time / self.consts.dt_decision - 1e-9)

    def advance(self, action_red: Action, action_blue: Action) -> StepResult:
        """Apply both actions over one decision interval.

        Rewards are +1/-1 to the winner/loser on the step an engagement ends
        and 0 otherwise. Finished engagements are frozen; calling this when all
        of them are finished raises :class:`EngagementOver`.
        """
        if np.all(self.done):
            raise EngagementOver("engagement already terminated")
        n = self.n
        running = ~self.done
        was_done = self.done.copy()

        for side, act in ((RED, action_red), (BLUE, action_blue)):
            fire = np.asarray(act.fire, dtype=bool) & self.can_fire(side)
            if np.any(fire):
                self.missiles[side] = launch(self.missiles[side], self.aircraft(side), fire)

        cr, cb = action_red.control(), action_blue.control()
        control = ControlInput(
            np.concatenate([np.broadcast_to(cr.nx, n), np.broadcast_to(cb.nx, n)]),
            np.concatenate([np.broadcast_to(cr.nz, n), np.broadcast_to(cb.nz, n)]),
            np.concatenate([np.broadcast_to(cr.mu, n), np.broadcast_to(cb.mu, n)]),
        )
        both = _concat(self.red, self.blue)
        live = running.copy()
        mc, dt = self.missile_config, self.consts.dt_physics
        for _ in range(self.consts.substeps):
            live2 = np.concatenate([live, live])
            stepped = fd.step(both, control, self.consts).select(live2, both)
            red0, blue0 = both[:n], both[n:]
            red1, blue1 = stepped[:n], stepped[n:]
            self.missiles[RED] = step_and_adjudicate(self.missiles[RED], red1, blue0, blue1, mc, dt, live)
            self.missiles[BLUE] = step_and_adjudicate(self.missiles[BLUE], blue1, red0, red1, mc, dt, live)
            both = stepped

            red_lost = (self.missiles[BLUE].status == HIT) | (np.asarray(red1.z) <= 0.0)
            blue_lost = (self.missiles[RED].status == HIT) | (np.asarray(blue1.z) <= 0.0)
            ended = live & (red_lost | blue_lost)
            if np.any(ended):
                any_hit = (self.missiles[RED].status == HIT) | (self.missiles[BLUE].status == HIT)
                self._finish(
                    ended,
                    np.select([red_lost & blue_lost, red_lost], [Outcome.DRAW, Outcome.BLUE_WINS], Outcome.RED_WINS),
                    np.where(any_hit, Reason.HIT, Reason.GROUND_CONTACT),
                )
            missed = live & ~ended & (self.missiles[RED].status == MISSED) & (self.missiles[BLUE].status == MISSED)
            if np.any(missed):
                self._finish(missed, Outcome.DRAW, Reason.BOTH_MISSED)
            live = live & ~self.done
            if not np.any(live):
                break

        self.red, self.blue = both[:n], both[n:]
        self.steps = np.where(running, self.steps + 1, self.steps)
        self.time = np.where(running, self.time + self.consts.dt_decision, self.time)
        timeout = running & ~self.done & (self.time >= self.config.max_sim_time - 1e-9)
        if np.any(timeout):
            self._finish(timeout, Outcome.DRAW, Reason.TIMEOUT)

        just_done = self.done & ~was_done
        rewards = np.zeros((n, 2))
        rewards[just_done & (self.outcome == Outcome.RED_WINS)] = (1.0, -1.0)
        rewards[just_done & (self.outcome == Outcome.BLUE_WINS)] = (-1.0, 1.0)
        return StepResult(rewards, self.done.copy(), just_done)

    def _finish(self, mask, outcome, reason):
        self.outcome = np.where(mask, outcome, self.outcome).astype(np.int8)
        self.reason = np.where(mask, reason, self.reason).astype(np.int8)
        self.done = self.done | mask

    def records(self, index: int = 0) -> list[dict]:
        """Trajectory records for one engagement at the current time."""
        t = round(float(self.time[index]), 9)
        out = []
        for side in (RED, BLUE):
            ac = self.aircraft(side)[index]
            out.append(
                {
                    "t": t,
                    "id": SIDE_NAMES[side],
                    "kind": "aircraft",
                    "x": float(ac.x),
                    "y": float(ac.y),
                    "z": float(ac.z),
                    "v": float(ac.v),
                    "gamma": float(ac.gamma),
                    "psi": float(ac.psi),
                    "phase": None,
                    "status": None,
                }
            )
        for side in (RED, BLUE):
            m = self.missiles[side]
            if m.status[index] == IDLE:
                continue
            px, py, pz = (float(c) for c in m.position[index])
            vx, vy, vz = m.velocity[index]
            speed = float(math.sqrt(vx * vx + vy * vy + vz * vz))
            out.append(
                {
                    "t": t,
                    "id": f"{SIDE_NAMES[side]}_missile",
                    "kind": "missile",
                    "x": px,
                    "y": py,
                    "z": pz,
                    "v": speed,
                    "gamma": float(math.atan2(vz, math.hypot(vx, vy))),
                    "psi": float(math.atan2(vy, vx)),
                    "phase": Phase(int(m.phase[index])).name.lower(),
                    "status": Status(int(m.status[index])).name.lower(),
                }
            )
        return out
