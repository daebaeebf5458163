"""Numerical symmetry auditing for (dynamics, reward, group) triples.

Two checks: reward invariance under jointly transforming all agent
states and actions, and dynamics equivariance, i.e. pushing the state
derivative through the action's differential must match evaluating the
dynamics at the transformed state. Both are sampled maxima, so a pass is
evidence at the sampled points and a fail is a certificate.

Also includes a finite-sample demonstration that a non-equivariant
system becomes equivariant once the input space is extended by the
group-pushed copies of the vector field, and that constraining the
extended input back to the original one reproduces the original
trajectory exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .env import RewardCoeffs, neighborhoods_from_positions, reward
from .groups import GroupElement, random_group_element
from .policy import embed, transform_local_graph
from .quad import QuadParams, QuadState, StateDerivative, act_on_state, derivative


@dataclass(frozen=True)
class ConditionResult:
    name: str
    residual: float
    tolerance: float
    samples: int
    passed: bool

    @staticmethod
    def from_residual(name, residual, tol, n):
        return ConditionResult(name, float(residual), float(tol), int(n), bool(residual <= tol))


@dataclass(frozen=True)
class AuditReport:
    group: str
    seed: int
    conditions: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "seed": self.seed,
            "passed": self.passed,
            "conditions": [c.__dict__ for c in self.conditions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"group: {self.group}   seed: {self.seed}",
                 f"{'condition':<28}{'residual':>14}{'tolerance':>12}{'n':>7}  verdict"]
        for c in self.conditions:
            lines.append(f"{c.name:<28}{c.residual:>14.6g}{c.tolerance:>12.3g}"
                         f"{c.samples:>7}  {'pass' if c.passed else 'FAIL'}")
        return "\n".join(lines)


def audit_reward(reward_fn, group_sampler, state_sampler, n: int, tol: float) -> ConditionResult:
    """Max over samples of |L(x, u) - L(phi_g x, psi_g u)|."""
    worst = 0.0
    for _ in range(n):
        states, actions = state_sampler()
        g = group_sampler()
        base = reward_fn(states, actions)
        moved = reward_fn([act_on_state(g, s) for s in states], actions)
        worst = max(worst, abs(base - moved))
    return ConditionResult.from_residual("reward invariance", worst, tol, n)


def audit_dynamics(dyn_fn, dphi_fn, state_action, input_action, group_sampler,
                   sample_fn, n: int, tol: float, flatten=np.asarray) -> ConditionResult:
    """Max over samples of ||dphi_g f(x, u) - f(phi_g x, psi_g u)||.

    dphi_fn must return a flat array; ``flatten`` maps the raw dynamics
    output to the same layout.
    """
    worst = 0.0
    for _ in range(n):
        x, u = sample_fn()
        g = group_sampler()
        lhs = np.asarray(dphi_fn(g, dyn_fn(x, u)))
        rhs = flatten(dyn_fn(state_action(g, x), input_action(g, u)))
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return ConditionResult.from_residual("dynamics equivariance", worst, tol, n)


# ---------------------------------------------------------------------------
# quadrotor-specific wiring


def rotate_derivative(g: GroupElement, d: StateDerivative) -> np.ndarray:
    """Differential of the state action applied to a state derivative:
    all world-frame rows rotate, body rates are frame-invariant, and the
    translation part drops out of every derivative."""
    R = g.rotation
    return np.concatenate([R @ d.d_position, R @ d.d_velocity,
                           (R @ d.d_attitude).reshape(9), d.d_body_rates])


def quad_dynamics_fn(params: QuadParams):
    def dyn(s: QuadState, u: np.ndarray) -> StateDerivative:
        return derivative(s, u, params)
    return dyn


def quad_sample_fn(rng: np.random.Generator, spread: float = 3.0):
    from .groups import random_rotation

    def sample():
        R = random_rotation(rng).rotation
        s = QuadState(rng.uniform(-spread, spread, 3), rng.normal(size=3), R,
                      rng.normal(size=3), rng.uniform(-spread, spread, 3))
        return s, rng.uniform(0.0, 1.0, 4)
    return sample


def audit_quad_dynamics(params: QuadParams, group: str, n: int, tol: float,
                        seed: int = 0) -> ConditionResult:
    rng = np.random.default_rng(seed)
    dyn = quad_dynamics_fn(params)
    return audit_dynamics(
        dyn_fn=dyn,
        dphi_fn=lambda g, d: rotate_derivative(g, d),
        state_action=act_on_state,
        input_action=lambda g, u: u,  # thrust fractions are frame scalars
        group_sampler=lambda: random_group_element(rng, group),
        sample_fn=quad_sample_fn(rng),
        n=n, tol=tol,
        flatten=lambda d: d.flat(),
    )


def swarm_reward_fn(coeffs: RewardCoeffs, k_neighbors: int):
    """Joint objective: sum of per-agent rewards over the swarm.

    Room-boundary penalties are excluded (the room breaks translation
    symmetry); the hard-contact indicator is computed statelessly from
    current separations.
    """

    def joint(states: list, actions: np.ndarray) -> float:
        pos = np.stack([s.position for s in states])
        nbrs = neighborhoods_from_positions(pos, k_neighbors)
        total = 0.0
        for i, s in enumerate(states):
            neighbor_pos = pos[nbrs[i]]
            contact = bool(len(neighbor_pos) and
                           (np.linalg.norm(neighbor_pos - s.position, axis=1) < coeffs.d_min).any())
            total += reward(s, neighbor_pos, actions[i], coeffs, charge_collision=contact).total
        return total

    return joint


def audit_swarm_reward(coeffs: RewardCoeffs, group: str, n: int, tol: float,
                       num_agents: int = 5, k_neighbors: int = 3, seed: int = 0) -> ConditionResult:
    rng = np.random.default_rng(seed)
    fn = swarm_reward_fn(coeffs, k_neighbors)
    from .groups import random_rotation

    def sample_states():
        states = []
        for _ in range(num_agents):
            R = random_rotation(rng).rotation
            states.append(QuadState(rng.uniform(0, 4, 3), rng.normal(size=3), R,
                                    rng.normal(size=3), rng.uniform(0, 4, 3)))
        return states, rng.normal(size=(num_agents, 4))

    return audit_reward(fn, lambda: random_group_element(rng, group), sample_states, n, tol)


def audit_policy(actor_critic, group: str, n: int, tol: float, seed: int = 0,
                 max_nodes: int = 8) -> ConditionResult:
    """Relative residual of the frame-canonicalization identity on the
    equivariant stage of a policy."""
    from .env import LocalGraph
    from .groups import random_rotation
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        m = int(rng.integers(1, max_nodes + 1))
        states = []
        for _ in range(m):
            R = random_rotation(rng).rotation
            states.append(QuadState(rng.uniform(0, 5, 3), rng.normal(size=3), R,
                                    rng.normal(size=3), rng.uniform(0, 5, 3)))
        poses = [GroupElement(s.attitude, s.position) for s in states]
        lg = LocalGraph(0, np.arange(m), states, poses)
        g = random_group_element(rng, group)
        y0a, y1a = embed(lg, actor_critic.params, actor_critic.cfg)
        y0b, y1b = embed(transform_local_graph(g, lg), actor_critic.params, actor_critic.cfg)
        expect = np.concatenate([y0a, (y1a @ g.rotation.T).ravel()])
        got = np.concatenate([y0b, y1b.ravel()])
        rel = np.linalg.norm(got - expect) / (1.0 + np.linalg.norm(expect))
        worst = max(worst, float(rel))
    return ConditionResult.from_residual("policy equivariance", worst, tol, n)


# ---------------------------------------------------------------------------
# push-forward input extension on a planar integrator


@dataclass(frozen=True)
class PushforwardReport:
    equivariance_residual: float
    trajectory_max_deviation: float
    group_order: int
    steps: int
    passed: bool

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def pushforward_demo(angles=(0.0, np.pi / 2, np.pi, 3 * np.pi / 2), steps: int = 100,
                     dt: float = 0.05, tol: float = 1e-12, seed: int = 0) -> PushforwardReport:
    """Planar single integrator under a cyclic rotation subgroup.

    The base field is f(x, u) = u. The extended system carries one
    (weight, input) slot per sampled rotation and sums the rotated
    copies; a group element acts on the extension by permuting slots
    according to the multiplication table, which makes the extended
    system equivariant for that subgroup. Constraining the weights to a
    one-hot on the identity slot reproduces the base system exactly.
    """
    k = len(angles)
    mats = [_rot2(a) for a in angles]
    if not np.allclose(mats[0], np.eye(2)):
        raise ValueError("first sampled element must be the identity")

    def extended(x, weights, inputs):
        del x  # the integrator field has no state dependence
        return sum(w * (m @ u) for w, m, u in zip(weights, mats, inputs))

    # slot permutation: acting by element q sends slot j to the slot of q*g_j
    def slot_map(qi):
        out = np.empty(k, dtype=int)
        for j in range(k):
            target = (angles[qi] + angles[j]) % (2 * np.pi)
            out[j] = int(np.argmin([min(abs(target - a), 2 * np.pi - abs(target - a))
                                    for a in angles]))
        return out

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=2)
        weights = rng.normal(size=k)
        inputs = [rng.normal(size=2) for _ in range(k)]
        for qi in range(k):
            sm = slot_map(qi)
            w2 = np.empty(k)
            u2 = [None] * k
            for j in range(k):
                w2[sm[j]] = weights[j]
                u2[sm[j]] = inputs[j]
            lhs = mats[qi] @ extended(x, weights, inputs)
            rhs = extended(mats[qi] @ x, w2, u2)
            worst = max(worst, float(np.abs(lhs - rhs).max()))

    # one-hot constraint: extended trajectory must equal the base trajectory
    x_base = rng.normal(size=2)
    x_ext = x_base.copy()
    onehot = np.zeros(k)
    onehot[0] = 1.0
    deviation = 0.0
    for step_idx in range(steps):
        u = np.array([np.sin(0.1 * step_idx), np.cos(0.07 * step_idx)])
        x_base = x_base + dt * u
        x_ext = x_ext + dt * extended(x_ext, onehot, [u] * k)
        deviation = max(deviation, float(np.abs(x_base - x_ext).max()))

    return PushforwardReport(worst, deviation, k, steps,
                             passed=bool(worst <= tol and deviation == 0.0))
