"""Point-mass aircraft model and its fixed-step integration.

State is (x, y, z, v, gamma, psi) and the control is (nx, nz, mu). Every
function here is elementwise, so fields may be Python floats or numpy arrays
of a common shape (one entry per engagement in a batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

G = 9.81

SPEED_MIN, SPEED_MAX = 250.0, 400.0
GAMMA_LIMIT = 1.48

NX_BOUNDS = (-1.0, 2.0)
NZ_BOUNDS = (0.0, 8.0)
MU_BOUNDS = (-np.pi, np.pi)


class SingularityError(ArithmeticError):
    """Flight-path angle too close to vertical for the heading equation."""


@dataclass(frozen=True)
class PhysicsConstants:
    g: float = G
    dt_physics: float = 0.02
    dt_decision: float = 0.2

    def __post_init__(self):
        if self.dt_physics <= 0 or self.dt_decision <= 0:
            raise ValueError("time steps must be positive")
        ratio = self.dt_decision / self.dt_physics
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_decision must be a positive integer multiple of dt_physics")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_decision / self.dt_physics))


STATE_FIELDS = ("x", "y", "z", "v", "gamma", "psi")


@dataclass(frozen=True)
class AircraftState:
    x: np.ndarray | float
    y: np.ndarray | float
    z: np.ndarray | float
    v: np.ndarray | float
    gamma: np.ndarray | float
    psi: np.ndarray | float

    def as_array(self) -> np.ndarray:
        """Stack the fields along the last axis, shape (..., 6)."""
        return np.stack([np.asarray(getattr(self, f), dtype=float) for f in STATE_FIELDS], axis=-1)

    @classmethod
    def from_array(cls, arr) -> "AircraftState":
        arr = np.asarray(arr, dtype=float)
        return cls(*(arr[..., i] for i in range(6)))

    def position(self) -> np.ndarray:
        return np.stack([np.asarray(self.x, float), np.asarray(self.y, float), np.asarray(self.z, float)], axis=-1)

    def velocity(self) -> np.ndarray:
        """Inertial velocity vector, shape (..., 3)."""
        cg = np.cos(self.gamma)
        return np.stack(
            [self.v * cg * np.cos(self.psi), self.v * cg * np.sin(self.psi), self.v * np.sin(self.gamma)],
            axis=-1,
        )

    def select(self, mask, other: "AircraftState") -> "AircraftState":
        """Take fields from ``self`` where ``mask`` is true and from ``other`` elsewhere."""
        return AircraftState(*(np.where(mask, getattr(self, f), getattr(other, f)) for f in STATE_FIELDS))

    def __getitem__(self, idx) -> "AircraftState":
        return AircraftState(*(np.asarray(getattr(self, f))[idx] for f in STATE_FIELDS))


@dataclass(frozen=True)
class ControlInput:
    nx: np.ndarray | float
    nz: np.ndarray | float
    mu: np.ndarray | float

    def clipped(self) -> "ControlInput":
        return ControlInput(
            np.clip(self.nx, *NX_BOUNDS),
            np.clip(self.nz, *NZ_BOUNDS),
            np.clip(self.mu, *MU_BOUNDS),
        )


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def derivatives(state: AircraftState, control: ControlInput, consts: PhysicsConstants = PhysicsConstants()):
    """Time derivative (xdot, ydot, zdot, vdot, gammadot, psidot) of the point-mass model."""
    g = consts.g
    v, gamma, psi = state.v, state.gamma, state.psi
    cos_g = np.cos(gamma)
    if np.any(np.abs(cos_g) <= 1e-6):
        raise SingularityError("|cos(gamma)| <= 1e-6")
    xdot = v * cos_g * np.cos(psi)
    ydot = v * cos_g * np.sin(psi)
    zdot = v * np.sin(gamma)
    vdot = g * (control.nx - np.sin(gamma))
    gammadot = (g / v) * (control.nz * np.cos(control.mu) - cos_g)
    psidot = (g / (v * cos_g)) * control.nz * np.sin(control.mu)
    return xdot, ydot, zdot, vdot, gammadot, psidot


def _offset(state: AircraftState, k, h) -> AircraftState:
    return AircraftState(*(getattr(state, f) + h * d for f, d in zip(STATE_FIELDS, k)))


def rk4(state: AircraftState, control: ControlInput, dt: float, consts: PhysicsConstants = PhysicsConstants()) -> AircraftState:
    """One unclamped classical Runge-Kutta step of size ``dt``."""
    k1 = derivatives(state, control, consts)
    k2 = derivatives(_offset(state, k1, 0.5 * dt), control, consts)
    k3 = derivatives(_offset(state, k2, 0.5 * dt), control, consts)
    k4 = derivatives(_offset(state, k3, dt), control, consts)
    return AircraftState(
        *(
            getattr(state, f) + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for f, a, b, c, d in zip(STATE_FIELDS, k1, k2, k3, k4)
        )
    )


def clamp_state(state: AircraftState) -> AircraftState:
    return AircraftState(
        state.x,
        state.y,
        state.z,
        np.clip(state.v, SPEED_MIN, SPEED_MAX),
        np.clip(state.gamma, -GAMMA_LIMIT, GAMMA_LIMIT),
        wrap_angle(state.psi),
    )


def step(state: AircraftState, control: ControlInput, consts: PhysicsConstants = PhysicsConstants()) -> AircraftState:
    """Advance by ``consts.dt_physics`` with RK4, then clamp speed/gamma and wrap heading."""
    return clamp_state(rk4(state, control, consts.dt_physics, consts))


def integrate(
    state: AircraftState,
    control: ControlInput,
    duration: float,
    consts: PhysicsConstants = PhysicsConstants(),
    clamp: bool = True,
) -> AircraftState:
    """Hold ``control`` for ``duration`` seconds of ``dt_physics`` steps.

    With ``clamp=False`` the raw RK4 solution is returned (no speed/gamma
    limits, heading not wrapped); used to check integration accuracy.
    """
    n = int(round(duration / consts.dt_physics))
    for _ in range(n):
        state = step(state, control, consts) if clamp else rk4(state, control, consts.dt_physics, consts)
    return state
