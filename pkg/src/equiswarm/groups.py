"""Rigid-motion group elements, their actions, and frame canonicalization.

An element g = (R, t) of SE(3) acts on
  * points       p  ->  R p + t
  * directions   v  ->  R v          (velocities, angular rates, axes)
  * other group elements by left composition.

Features carried by graph nodes are "tensorial": a stack of scalar
channels (untouched by the action) plus a stack of 3-vector channels that
rotate, and optionally translate, with the frame. Expressing an arbitrary
function in a local frame before evaluating it and mapping the result
back out yields an equivariant function; ``canonicalize`` packages that
construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ORTHO_TOL = 1e-9


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the rows of R, preserving handedness."""
    r0 = R[0] / np.linalg.norm(R[0])
    r1 = R[1] - np.dot(R[1], r0) * r0
    r1 /= np.linalg.norm(r1)
    r2 = np.cross(r0, r1)
    return np.stack([r0, r1, r2])


@dataclass(frozen=True)
class GroupElement:
    """One rigid motion: a 3x3 rotation matrix and a 3-vector translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"expected (3,3) rotation and (3,) translation, got {R.shape} and {t.shape}")
        drift = np.linalg.norm(R.T @ R - np.eye(3))
        if drift > ORTHO_TOL:
            R = _orthonormalize(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def to_flat12(self) -> np.ndarray:
        """Serialize as 12 floats: row-major rotation, then translation."""
        return np.concatenate([self.rotation.reshape(9), self.translation])

    @staticmethod
    def from_flat12(v: np.ndarray) -> "GroupElement":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (12,):
            raise ValueError(f"expected 12 floats, got shape {v.shape}")
        return GroupElement(v[:9].reshape(3, 3), v[9:])


def identity() -> GroupElement:
    return GroupElement(np.eye(3), np.zeros(3))


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Group product: (R_a R_b, R_a t_b + t_a)."""
    return GroupElement(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(g: GroupElement) -> GroupElement:
    """(R, t)^-1 = (R^T, -R^T t)."""
    Rt = g.rotation.T
    return GroupElement(Rt, -Rt @ g.translation)


def rotation_x(angle: float) -> GroupElement:
    c, s = np.cos(angle), np.sin(angle)
    return GroupElement(np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]]), np.zeros(3))


def rotation_y(angle: float) -> GroupElement:
    c, s = np.cos(angle), np.sin(angle)
    return GroupElement(np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]]), np.zeros(3))


def rotation_z(angle: float) -> GroupElement:
    c, s = np.cos(angle), np.sin(angle)
    return GroupElement(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]), np.zeros(3))


def translation(t) -> GroupElement:
    return GroupElement(np.eye(3), np.asarray(t, dtype=np.float64))


def rotation_from_axis_angle(axis: np.ndarray, angle: float) -> GroupElement:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    R = np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
    return GroupElement(R, np.zeros(3))


def random_rotation(rng: np.random.Generator) -> GroupElement:
    """Axis uniform on the sphere, angle uniform on [0, pi]."""
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    return rotation_from_axis_angle(axis, rng.uniform(0.0, np.pi))


def random_group_element(rng: np.random.Generator, kind: str = "se3",
                         trans_range: float = 5.0) -> GroupElement:
    """Sample from one of the supported subgroups.

    kind: se3 | so3 | se2z (translations + z-rotations) | trans | identity
    """
    if kind == "identity":
        return identity()
    if kind == "trans":
        return translation(rng.uniform(-trans_range, trans_range, size=3))
    if kind == "so3":
        return random_rotation(rng)
    if kind == "se2z":
        g = rotation_z(rng.uniform(-np.pi, np.pi))
        return GroupElement(g.rotation, rng.uniform(-trans_range, trans_range, size=3))
    if kind == "se3":
        g = random_rotation(rng)
        return GroupElement(g.rotation, rng.uniform(-trans_range, trans_range, size=3))
    raise ValueError(f"unknown group kind {kind!r}")


def act_on_point(g: GroupElement, p: np.ndarray) -> np.ndarray:
    return g.rotation @ p + g.translation


def act_on_vector(g: GroupElement, v: np.ndarray) -> np.ndarray:
    return g.rotation @ v


@dataclass(frozen=True)
class TensorialFeature:
    """Scalar channels + 3-vector channels anchored to a local frame.

    ``positional`` flags the vector channels that represent points (they
    pick up the translation part of an action); every other vector
    channel is a direction and only rotates. Scalars never change.
    """

    scalars: np.ndarray
    vectors: np.ndarray
    frame: GroupElement = field(default_factory=identity)
    positional: np.ndarray | None = None

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scalars, dtype=np.float64))
        v = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 3)
        pos = self.positional
        if pos is None:
            pos = np.zeros(len(v), dtype=bool)
        else:
            pos = np.asarray(pos, dtype=bool)
            if pos.shape != (len(v),):
                raise ValueError(f"positional mask shape {pos.shape} does not match {len(v)} vector channels")
        object.__setattr__(self, "scalars", s)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "positional", pos)


def act_on_feature(g: GroupElement, f: TensorialFeature) -> TensorialFeature:
    """Scalars pass through; vectors rotate (and translate if positional);
    the carried frame is left-composed with g."""
    vecs = f.vectors @ g.rotation.T
    if f.positional.any():
        vecs = vecs + np.where(f.positional[:, None], g.translation[None, :], 0.0)
    return TensorialFeature(f.scalars.copy(), vecs, compose(g, f.frame), f.positional.copy())


def canonicalize(f_body: Callable, in_action: Callable, out_action: Callable) -> Callable:
    """Lift an arbitrary map to an equivariant one on frame-tagged inputs.

    Given actions ``in_action(g, x)`` and ``out_action(g, y)``, returns
    F(g, x) = out_action(g, f_body(in_action(g^-1, x))). F satisfies
    F(q.g, in_action(q, x)) = out_action(q, F(g, x)) for every q.
    """

    def lifted(g: GroupElement, x):
        return out_action(g, f_body(in_action(inverse(g), x)))

    return lifted
