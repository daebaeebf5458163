"""Rigid-body quadrotor dynamics with normalized thrust inputs.

World-frame translational dynamics under gravity plus body-frame thrust,
Euler rotational dynamics, and attitude driven by the world-frame angular
rate. Integration is semi-implicit Euler (velocity first, trapezoidal
position update, first-order attitude update with re-orthonormalization),
sub-stepped at the physics rate while actions are held at the control
rate (zero-order hold).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .groups import GroupElement, _orthonormalize

GRAVITY = np.array([0.0, 0.0, -9.81])


class DivergenceError(RuntimeError):
    """The simulated state left the finite-number regime."""


@dataclass(frozen=True)
class QuadState:
    """World-frame pose and rates of one vehicle plus its target point."""

    position: np.ndarray        # m
    velocity: np.ndarray        # m/s
    attitude: np.ndarray        # 3x3 body->world rotation
    body_rates: np.ndarray      # rad/s, body frame
    target: np.ndarray          # m

    def __post_init__(self):
        for name in ("position", "velocity", "body_rates", "target"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        object.__setattr__(self, "attitude", np.asarray(self.attitude, dtype=np.float64).reshape(3, 3))

    @property
    def world_rates(self) -> np.ndarray:
        """Angular velocity expressed in the world frame."""
        return self.attitude @ self.body_rates

    @property
    def pose(self) -> GroupElement:
        return GroupElement(self.attitude, self.position)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.position).all() and np.isfinite(self.velocity).all()
                    and np.isfinite(self.attitude).all() and np.isfinite(self.body_rates).all()
                    and np.isfinite(self.target).all())


def level_state(position, target=None) -> QuadState:
    position = np.asarray(position, dtype=np.float64)
    return QuadState(position, np.zeros(3), np.eye(3), np.zeros(3),
                     position if target is None else target)


@dataclass(frozen=True)
class QuadParams:
    """Physical constants and step sizes; see configs/default.cfg."""

    mass: float = 0.027
    inertia: np.ndarray = field(default_factory=lambda: np.diag([1.4e-5, 1.4e-5, 2.17e-5]))
    arm_length: float = 0.046
    yaw_torque_coeff: float = 0.006
    max_thrust: float = 0.15          # per motor, N
    dt_phys: float = 0.0025
    dt_ctrl: float = 0.01
    # body-rate saturation (rad/s); stands in for unmodeled rotational drag
    # and keeps the gyroscopic term from going stiff under random actions
    omega_max: float = 40.0
    # first-order aerodynamic drag, zero by default: world-frame force
    # -linear_drag * v and body-frame torque -angular_drag * omega
    linear_drag: float = 0.0
    angular_drag: float = 0.0
    # optional extra wrench hook: (x, v, R, w, a) -> (force_world, torque_body)
    external_wrench: Callable | None = None

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "inertia", J)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise ValueError("inertia tensor must be symmetric positive-definite")
        ratio = self.dt_ctrl / self.dt_phys
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"dt_ctrl={self.dt_ctrl} must be an integer multiple of dt_phys={self.dt_phys}")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_ctrl / self.dt_phys))

    @property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)

    def hover_action(self) -> np.ndarray:
        """Per-motor normalized thrust that exactly cancels gravity when level."""
        return np.full(4, self.mass * 9.81 / (4.0 * self.max_thrust))


def normalize_action(u: np.ndarray) -> np.ndarray:
    """Map raw policy output to [0, 1]^4 thrust fractions: (1 + clip(u, -1, 1)) / 2."""
    u = np.asarray(u, dtype=np.float64)
    if np.isnan(u).any():
        raise ValueError("normalize_action: NaN in raw action")
    return (1.0 + np.clip(u, -1.0, 1.0)) / 2.0


def mix_torques(a: np.ndarray, p: QuadParams) -> np.ndarray:
    """Body torques from normalized thrusts, X configuration.

    Motor layout (body x forward, y left): 0 front-left, 1 front-right,
    2 rear-right, 3 rear-left; spin directions alternate so equal thrusts
    produce zero net torque.
    """
    T = a * p.max_thrust
    d = p.arm_length / np.sqrt(2.0)
    roll = d * (T[..., 0] - T[..., 1] - T[..., 2] + T[..., 3])
    pitch = d * (-T[..., 0] - T[..., 1] + T[..., 2] + T[..., 3])
    yaw = p.yaw_torque_coeff * (-T[..., 0] + T[..., 1] - T[..., 2] + T[..., 3])
    return np.stack([roll, pitch, yaw], axis=-1)


def _skew(w: np.ndarray) -> np.ndarray:
    O = np.zeros(w.shape[:-1])
    return np.stack([
        np.stack([O, -w[..., 2], w[..., 1]], axis=-1),
        np.stack([w[..., 2], O, -w[..., 0]], axis=-1),
        np.stack([-w[..., 1], w[..., 0], O], axis=-1),
    ], axis=-2)


@dataclass(frozen=True)
class StateDerivative:
    """Time derivative of a QuadState (targets are externally driven)."""

    d_position: np.ndarray
    d_velocity: np.ndarray
    d_attitude: np.ndarray
    d_body_rates: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_position, self.d_velocity,
                               self.d_attitude.reshape(9), self.d_body_rates])


def derivative(s: QuadState, a: np.ndarray, p: QuadParams) -> StateDerivative:
    """Continuous-time dynamics at normalized thrusts a in [0,1]^4."""
    dx, dv, dR, dw = _derivative_arrays(s.position[None], s.velocity[None],
                                        s.attitude[None], s.body_rates[None],
                                        np.asarray(a, dtype=np.float64)[None], p)
    return StateDerivative(dx[0], dv[0], dR[0], dw[0])


def _derivative_arrays(x, v, R, w, a, p: QuadParams):
    """Vectorized dynamics over a leading batch axis."""
    thrust = a * p.max_thrust
    f_body = np.zeros(x.shape)
    f_body[..., 2] = thrust.sum(axis=-1)
    dv = GRAVITY + np.einsum("...ij,...j->...i", R, f_body) / p.mass
    tau = mix_torques(a, p)
    if p.linear_drag:
        dv = dv - (p.linear_drag / p.mass) * v
    if p.angular_drag:
        tau = tau - p.angular_drag * w
    if p.external_wrench is not None:
        f_ext, tau_ext = p.external_wrench(x, v, R, w, a)
        dv = dv + f_ext / p.mass
        tau = tau + tau_ext
    Jw = np.einsum("ij,...j->...i", p.inertia, w)
    dw = np.einsum("ij,...j->...i", p.inertia_inv, tau - np.cross(w, Jw))
    w_world = np.einsum("...ij,...j->...i", R, w)
    dR = _skew(w_world) @ R
    return v.copy(), dv, dR, dw


def _substep_arrays(x, v, R, w, a, p: QuadParams, dt: float):
    """One physics substep: velocity first, trapezoidal position, then
    rates and a first-order attitude update with re-orthonormalization."""
    _, dv, _, dw = _derivative_arrays(x, v, R, w, a, p)
    v_new = v + dv * dt
    x_new = x + 0.5 * (v + v_new) * dt
    w_new = w + dw * dt
    if p.omega_max is not None:
        mag = np.linalg.norm(w_new, axis=-1, keepdims=True)
        w_new = w_new * np.minimum(1.0, p.omega_max / np.maximum(mag, 1e-12))
    w_world = np.einsum("...ij,...j->...i", R, w_new)
    R_new = R + _skew(w_world) @ R * dt
    R_new = _orthonormalize_batch(R_new)
    return x_new, v_new, R_new, w_new


def _orthonormalize_batch(R: np.ndarray) -> np.ndarray:
    """Row-wise Gram-Schmidt over a batch of 3x3 matrices."""
    r0 = R[..., 0, :]
    r0 = r0 / np.linalg.norm(r0, axis=-1, keepdims=True)
    r1 = R[..., 1, :]
    r1 = r1 - np.sum(r1 * r0, axis=-1, keepdims=True) * r0
    r1 = r1 / np.linalg.norm(r1, axis=-1, keepdims=True)
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2], axis=-2)


def step(s: QuadState, a: np.ndarray, p: QuadParams) -> QuadState:
    """Advance one control period (dt_ctrl) holding the action constant."""
    x, v, R, w = (s.position[None].copy(), s.velocity[None].copy(),
                  s.attitude[None].copy(), s.body_rates[None].copy())
    a = np.asarray(a, dtype=np.float64)[None]
    for _ in range(p.substeps):
        x, v, R, w = _substep_arrays(x, v, R, w, a, p, p.dt_phys)
    out = QuadState(x[0], v[0], R[0], w[0], s.target)
    if not out.is_finite():
        raise DivergenceError("quadrotor state became non-finite during integration")
    return out


def act_on_state(g: GroupElement, s: QuadState) -> QuadState:
    """Rigid motion of a state: points move affinely, rates rotate, the
    attitude is left-composed; body rates are frame-invariant."""
    return QuadState(
        g.rotation @ s.position + g.translation,
        g.rotation @ s.velocity,
        g.rotation @ s.attitude,
        s.body_rates,
        g.rotation @ s.target + g.translation,
    )


def mechanical_energy(s: QuadState, p: QuadParams) -> float:
    """Translational + rotational kinetic energy plus gravity potential."""
    ke = 0.5 * p.mass * float(s.velocity @ s.velocity)
    rot = 0.5 * float(s.body_rates @ (p.inertia @ s.body_rates))
    return ke + rot + p.mass * 9.81 * float(s.position[2])
