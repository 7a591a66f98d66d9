"""Missile flight, proportional-navigation guidance and hit/miss adjudication.

A :class:`MissileState` holds one missile slot per engagement in a batch
(arrays of length N). Slots that have not been fired sit in ``IDLE``; once a
slot reaches ``HIT`` or ``MISSED`` it is never touched again.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .flightdyn import AircraftState


class Phase(IntEnum):
    MIDCOURSE = 0
    TERMINAL = 1


class Status(IntEnum):
    IDLE = 0
    IN_FLIGHT = 1
    HIT = 2
    MISSED = 3


class MissReason(IntEnum):
    NONE = 0
    TIMEOUT = 1
    MIDCOURSE_LOST = 2
    TERMINAL_LOST = 3


class LaunchError(RuntimeError):
    pass


# plain ints for array comparisons in the hot loop
IDLE, IN_FLIGHT, HIT, MISSED = (int(s) for s in Status)
MIDCOURSE, TERMINAL = int(Phase.MIDCOURSE), int(Phase.TERMINAL)


def cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def norm(a):
    return np.sqrt(dot(a, a))


@dataclass(frozen=True)
class MissileConfig:
    hit_radius: float = 12.0
    max_flight_time: float = 120.0
    midcourse_azimuth_limit: float = np.pi / 3
    terminal_azimuth_limit: float = np.pi / 2
    seeker_activation_range: float = 20_000.0
    nav_constant: float = 4.0
    boost_duration: float = 6.0
    boost_accel: float = 200.0
    drag_coefficient: float = 2.5e-5
    max_lateral_accel: float = 300.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"MissileConfig.{name} must be positive, got {value}")
        if self.terminal_azimuth_limit <= self.midcourse_azimuth_limit:
            raise ValueError("terminal_azimuth_limit must exceed midcourse_azimuth_limit")


@dataclass(frozen=True)
class MissileState:
    position: np.ndarray  # (N, 3)
    velocity: np.ndarray  # (N, 3)
    flight_time: np.ndarray
    phase: np.ndarray
    status: np.ndarray
    min_distance: np.ndarray
    miss_reason: np.ndarray

    @classmethod
    def idle(cls, n: int) -> "MissileState":
        return cls(
            position=np.zeros((n, 3)),
            velocity=np.zeros((n, 3)),
            flight_time=np.zeros(n),
            phase=np.full(n, Phase.MIDCOURSE, dtype=np.int8),
            status=np.full(n, Status.IDLE, dtype=np.int8),
            min_distance=np.full(n, np.inf),
            miss_reason=np.full(n, MissReason.NONE, dtype=np.int8),
        )

    def __len__(self) -> int:
        return len(self.status)

    @property
    def in_flight(self) -> np.ndarray:
        return self.status == IN_FLIGHT

    @property
    def speed(self) -> np.ndarray:
        return norm(self.velocity)


def launch(missiles: MissileState, shooter: AircraftState, mask=None) -> MissileState:
    """Fire the slots selected by ``mask`` from the shooter's position and velocity."""
    mask = np.ones(len(missiles), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if np.any(mask & (missiles.status != IDLE)):
        raise LaunchError("aircraft has no missile remaining")
    m = mask[:, None]
    pos = np.broadcast_to(shooter.position(), missiles.position.shape)
    vel = np.broadcast_to(shooter.velocity(), missiles.velocity.shape)
    return MissileState(
        position=np.where(m, pos, missiles.position),
        velocity=np.where(m, vel, missiles.velocity),
        flight_time=np.where(mask, 0.0, missiles.flight_time),
        phase=np.where(mask, MIDCOURSE, missiles.phase).astype(np.int8),
        status=np.where(mask, IN_FLIGHT, missiles.status).astype(np.int8),
        min_distance=np.where(mask, np.inf, missiles.min_distance),
        miss_reason=missiles.miss_reason,
    )


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unsigned 3-D angle between vectors along the last axis."""
    return np.arctan2(norm(cross(a, b)), dot(a, b))


def guidance_accel(position, velocity, target_position, target_velocity, config: MissileConfig) -> np.ndarray:
    """Proportional navigation: ``N * (LOS rate) x v_missile``, magnitude-limited.

    Works on single vectors or on (N, 3) batches.
    """
    r = np.asarray(target_position, float) - np.asarray(position, float)
    vr = np.asarray(target_velocity, float) - np.asarray(velocity, float)
    r2 = dot(r, r)[..., None]
    los_rate = cross(r, vr) / np.maximum(r2, 1e-12)
    acc = config.nav_constant * cross(los_rate, np.asarray(velocity, float))
    mag = norm(acc)[..., None]
    scale = np.minimum(1.0, config.max_lateral_accel / np.maximum(mag, 1e-300))
    return acc * scale


def _closest_approach(r0: np.ndarray, r1: np.ndarray) -> np.ndarray:
    """Minimum |r0 + s (r1 - r0)| over s in [0, 1]."""
    d = r1 - r0
    dd = dot(d, d)
    s = np.where(dd > 0, -dot(r0, d) / np.where(dd > 0, dd, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    return norm(r0 + s[:, None] * d)


def _advance_speed(speed, flight_time, dt, config: MissileConfig):
    boost_left = np.clip(config.boost_duration - flight_time, 0.0, dt)
    s = speed + config.boost_accel * boost_left
    coast = dt - boost_left
    # exact solution of sdot = -c s^2 over the coasting part
    return s / (1.0 + config.drag_coefficient * s * coast)


def step_and_adjudicate(
    missiles: MissileState,
    shooter: AircraftState,
    target_before: AircraftState,
    target_after: AircraftState,
    config: MissileConfig,
    dt: float,
    mask=None,
) -> MissileState:
    """Fly every in-flight slot for ``dt`` seconds and apply the hit/miss rules.

    ``shooter`` is the launching aircraft at the end of the substep (it owns the
    midcourse datalink); the target is given at both ends of the substep so the
    closest approach can be interpolated. Slots outside ``mask`` are frozen.
    """
    active = missiles.in_flight
    if mask is not None:
        active = active & np.asarray(mask, dtype=bool)
    if not np.any(active):
        return missiles

    p, v = missiles.position, missiles.velocity
    tp0, tv0 = target_before.position(), target_before.velocity()
    tp1 = target_after.position()

    acc = guidance_accel(p, v, tp0, tv0, config)
    speed = norm(v)
    safe_speed = np.maximum(speed, 1e-9)
    u = v / safe_speed[:, None]
    acc_mag = norm(acc)
    n = acc / np.maximum(acc_mag, 1e-300)[:, None]
    theta = (acc_mag / safe_speed * dt)[:, None]
    u_new = u * np.cos(theta) + n * np.sin(theta)
    u_new /= np.maximum(norm(u_new), 1e-300)[:, None]

    new_speed = _advance_speed(speed, missiles.flight_time, dt, config)
    v_new = u_new * new_speed[:, None]
    p_new = p + 0.5 * dt * (v + v_new)
    t_new = missiles.flight_time + dt

    r0 = tp0 - p
    r1 = tp1 - p_new
    min_d = np.minimum(missiles.min_distance, _closest_approach(r0, r1))

    phase = np.where(
        norm(r1) <= config.seeker_activation_range, TERMINAL, missiles.phase
    )
    shooter_bearing = angle_between(shooter.velocity(), tp1 - shooter.position())
    seeker_bearing = angle_between(v_new, r1)

    hit = min_d < config.hit_radius
    timeout = t_new > config.max_flight_time + 1e-9
    lost_mid = (phase == MIDCOURSE) & (shooter_bearing > config.midcourse_azimuth_limit)
    lost_term = (phase == TERMINAL) & (seeker_bearing > config.terminal_azimuth_limit)

    reason = np.where(
        hit, 0, np.where(timeout, 1, np.where(lost_mid, 2, np.where(lost_term, 3, 0)))
    )  # MissReason codes
    status = np.where(hit, HIT, np.where(timeout | lost_mid | lost_term, MISSED, IN_FLIGHT))

    a3 = active[:, None]
    return MissileState(
        position=np.where(a3, p_new, p),
        velocity=np.where(a3, v_new, v),
        flight_time=np.where(active, t_new, missiles.flight_time),
        phase=np.where(active, phase, missiles.phase).astype(np.int8),
        status=np.where(active, status, missiles.status).astype(np.int8),
        min_distance=np.where(active, min_d, missiles.min_distance),
        miss_reason=np.where(active, reason, missiles.miss_reason).astype(np.int8),
    )
