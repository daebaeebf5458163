"""Multi-agent episodic swarm environment.

Each agent sees a fully connected local graph over itself and its K
nearest neighbors. Targets come from a scenario pool (static and dynamic
formations, goal swapping, swarm-vs-swarm crossings, pursuit curves).
Per-agent reward = position penalty + collision penalty + stability
penalty; hard-collision charges fire once per contact episode, so
actions taken while already in contact are not re-penalized.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .groups import GroupElement, rotation_from_axis_angle
from .quad import (
    DivergenceError,
    QuadParams,
    QuadState,
    _orthonormalize_batch,
    _substep_arrays,
    normalize_action,
)

SCENARIO_KINDS = (
    "static-same-goal", "static-different-goals", "dynamic-same",
    "dynamic-different", "swap-goals", "swarm-vs-swarm",
    "pursuit-lissajous", "pursuit-bezier",
)
FORMATIONS = ("circle", "grid", "sphere", "cylinder", "cube", "point")


@dataclass(frozen=True)
class Scenario:
    """Deterministic target generator: targets(t) is a pure function of
    (seed, t), so episode traces replay bit-identically."""

    kind: str = "static-different-goals"
    formation: str = "circle"
    num_agents: int = 8
    room_low: np.ndarray = field(default_factory=lambda: np.zeros(3))
    room_high: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))
    period: float = 5.0
    seed: int = 0
    formation_radius: float = 1.0
    lissajous_amplitude: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))
    lissajous_freq: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))
    lissajous_phase: float = np.pi / 2
    bezier_points: int = 6

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIO_KINDS}")
        if self.formation not in FORMATIONS:
            raise ValueError(f"unknown formation {self.formation!r}; expected one of {FORMATIONS}")
        object.__setattr__(self, "room_low", np.asarray(self.room_low, dtype=np.float64).reshape(3))
        object.__setattr__(self, "room_high", np.asarray(self.room_high, dtype=np.float64).reshape(3))
        object.__setattr__(self, "lissajous_amplitude",
                           np.asarray(self.lissajous_amplitude, dtype=np.float64).reshape(3))
        object.__setattr__(self, "lissajous_freq",
                           np.asarray(self.lissajous_freq, dtype=np.float64).reshape(3))
        if np.any(self.room_high <= self.room_low):
            raise ValueError("room_high must exceed room_low componentwise")

    @property
    def room_center(self) -> np.ndarray:
        return 0.5 * (self.room_low + self.room_high)

    def _rng(self, epoch: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, epoch])

    def _clamp(self, pts: np.ndarray) -> np.ndarray:
        margin = 0.02 * (self.room_high - self.room_low)
        return np.clip(pts, self.room_low + margin, self.room_high - margin)

    def _formation_points(self, rng: np.random.Generator, n: int,
                          rescale: bool = False) -> np.ndarray:
        radius = self.formation_radius * (rng.uniform(0.5, 1.5) if rescale else 1.0)
        pts = formation_layout(self.formation, n, radius)
        span = self.room_high - self.room_low
        center = self.room_low + span * rng.uniform(0.25, 0.75, size=3)
        return self._clamp(pts + center)

    def targets(self, t: float) -> np.ndarray:
        """Per-agent target positions at time t, shape (num_agents, 3)."""
        n = self.num_agents
        epoch = int(np.floor(t / self.period))
        if self.kind == "static-same-goal":
            return np.tile(self._formation_points(self._rng(0), 1), (n, 1))
        if self.kind == "static-different-goals":
            return self._formation_points(self._rng(0), n)
        if self.kind == "dynamic-same":
            return np.tile(self._formation_points(self._rng(epoch), 1), (n, 1))
        if self.kind == "dynamic-different":
            return self._formation_points(self._rng(epoch), n, rescale=True)
        if self.kind == "swap-goals":
            pts = self._formation_points(self._rng(0), n)
            perm = self._rng(epoch).permutation(n) if epoch > 0 else np.arange(n)
            return pts[perm]
        if self.kind == "swarm-vs-swarm":
            half = n // 2
            rng = self._rng(epoch // 2)
            a = self._formation_points(rng, half)
            b = self._formation_points(rng, n - half)
            if epoch % 2 == 1 and half == n - half:
                a, b = b, a
            return np.concatenate([a, b], axis=0)
        if self.kind == "pursuit-lissajous":
            A = self.lissajous_amplitude
            w = self.lissajous_freq
            p = self.room_center + np.array([
                A[0] * np.sin(w[0] * t + self.lissajous_phase),
                A[1] * np.sin(w[1] * t),
                A[2] * np.sin(w[2] * t),
            ])
            return np.tile(self._clamp(p[None, :]), (n, 1))
        if self.kind == "pursuit-bezier":
            p = self._bezier_point(t)
            return np.tile(self._clamp(p[None, :]), (n, 1))
        raise AssertionError("unreachable")

    def _bezier_point(self, t: float) -> np.ndarray:
        rng = self._rng(0)
        span = self.room_high - self.room_low
        way = self.room_low + span * rng.uniform(0.2, 0.8, size=(self.bezier_points, 3))
        handles = span * rng.uniform(-0.15, 0.15, size=(self.bezier_points, 3))
        m = self.bezier_points
        s_total = (t / self.period) % m
        seg = int(s_total)
        s = s_total - seg
        p0, p3 = way[seg % m], way[(seg + 1) % m]
        # C1-continuous composite: handle direction shared across the joint
        c1 = p0 + handles[seg % m]
        c2 = p3 - handles[(seg + 1) % m]
        u = 1.0 - s
        return (u ** 3 * p0 + 3 * u ** 2 * s * c1 + 3 * u * s ** 2 * c2 + s ** 3 * p3)


def formation_layout(name: str, n: int, radius: float) -> np.ndarray:
    """N points on the named shape, centered at the origin."""
    if name == "point" or n == 1:
        return np.zeros((n, 3))
    if name == "circle":
        ang = 2 * np.pi * np.arange(n) / n
        return np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n)], axis=1)
    if name == "grid":
        side = int(np.ceil(np.sqrt(n)))
        ij = np.array([(i, j) for i in range(side) for j in range(side)][:n], dtype=np.float64)
        pts = np.zeros((n, 3))
        pts[:, :2] = (ij - (side - 1) / 2) * (2 * radius / max(side - 1, 1))
        return pts
    if name == "sphere":
        k = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * k / n)
        theta = np.pi * (1 + np.sqrt(5.0)) * k
        return radius * np.stack([np.sin(phi) * np.cos(theta),
                                  np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1)
    if name == "cylinder":
        rings = max(int(np.ceil(n / 6)), 1)
        pts = []
        for i in range(n):
            ring, slot = divmod(i, 6)
            ang = 2 * np.pi * slot / min(6, n)
            z = (ring - (rings - 1) / 2) * (radius / max(rings, 1))
            pts.append([radius * np.cos(ang), radius * np.sin(ang), z])
        return np.asarray(pts)
    if name == "cube":
        side = int(np.ceil(n ** (1 / 3)))
        ijk = np.array([(i, j, k) for i in range(side) for j in range(side)
                        for k in range(side)][:n], dtype=np.float64)
        return (ijk - (side - 1) / 2) * (2 * radius / max(side - 1, 1))
    raise ValueError(f"unknown formation {name!r}")


# ---------------------------------------------------------------------------
# neighborhoods and local graphs


@dataclass(frozen=True)
class SwarmState:
    agents: list
    time: float
    scenario: Scenario

    @property
    def positions(self) -> np.ndarray:
        return np.stack([a.position for a in self.agents])


def neighborhoods(s: SwarmState, k: int) -> list:
    return neighborhoods_from_positions(s.positions, k)


def neighborhoods_from_positions(positions: np.ndarray, k: int) -> list:
    """K nearest others by Euclidean distance; ties break to lower index."""
    n = len(positions)
    if n == 1:
        return [np.array([], dtype=np.intp)]
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    kk = min(k, n - 1)
    return [order[i, :kk].copy() for i in range(n)]


def neighborhoods_epsilon(s: SwarmState, radius: float) -> list:
    """Distance-ball neighborhoods (variable size)."""
    pos = s.positions
    n = len(pos)
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return [np.flatnonzero(d[i] <= radius) for i in range(n)]


@dataclass(frozen=True)
class LocalGraph:
    """Ego-first complete graph over an agent and its neighbors."""

    ego_index: int
    node_indices: np.ndarray
    states: list
    poses: list

    @property
    def num_nodes(self) -> int:
        return len(self.states)

    @property
    def num_edges(self) -> int:
        n = self.num_nodes
        return n * (n - 1) // 2


def build_local_graph(s: SwarmState, i: int, k: int) -> LocalGraph:
    nbrs = neighborhoods(s, k)[i]
    return _graph_for(s, i, nbrs)


def build_all_local_graphs(s: SwarmState, k: int) -> list:
    nbrs = neighborhoods(s, k)
    return [_graph_for(s, i, nbrs[i]) for i in range(len(s.agents))]


def _graph_for(s: SwarmState, i: int, nbrs: np.ndarray) -> LocalGraph:
    idx = np.concatenate([[i], nbrs]).astype(np.intp)
    states = [s.agents[j] for j in idx]
    poses = [GroupElement(st.attitude, st.position) for st in states]
    return LocalGraph(i, idx, states, poses)


# ---------------------------------------------------------------------------
# rewards


@dataclass(frozen=True)
class RewardCoeffs:
    """Per-step reward coefficients; penalties scale with the control
    timestep except the one-shot collision charge."""

    c_position: float
    c_collision: float
    c_proximity: float
    c_spin: float
    c_thrust: float
    d_min: float = 0.1
    d_prox: float = 0.6

    @classmethod
    def for_timestep(cls, dt: float, d_min: float = 0.1, d_prox: float = 0.6) -> "RewardCoeffs":
        return cls(c_position=0.5 * dt, c_collision=5.0, c_proximity=5.0 * dt,
                   c_spin=0.01 * dt, c_thrust=0.05 * dt, d_min=d_min, d_prox=d_prox)


@dataclass(frozen=True)
class RewardBreakdown:
    position: float
    collision: float
    stability: float

    @property
    def total(self) -> float:
        return self.position + self.collision + self.stability


def reward(s: QuadState, neighbor_positions: np.ndarray, u: np.ndarray,
           coeffs: RewardCoeffs, charge_collision: bool = False) -> RewardBreakdown:
    """Per-agent reward.

    charge_collision is the first-contact indicator maintained by the
    environment; standalone callers may pass a statelessly computed flag.
    """
    r_pos = -coeffs.c_position * float(np.linalg.norm(s.position - s.target))
    r_col = -coeffs.c_collision if charge_collision else 0.0
    if len(neighbor_positions):
        dist = np.linalg.norm(neighbor_positions - s.position, axis=1)
        r_col -= coeffs.c_proximity * float(np.maximum(1.0 - dist / coeffs.d_prox, 0.0).sum())
    r_stab = -coeffs.c_spin * float(np.linalg.norm(s.body_rates)) \
        - coeffs.c_thrust * float(np.linalg.norm(u))
    return RewardBreakdown(r_pos, r_col, r_stab)


class ContactTracker:
    """First-instance bookkeeping: a pair (or a wall contact) must clear
    before it can be charged again."""

    def __init__(self):
        self.active_pairs: set = set()
        self.active_room: set = set()

    def update(self, positions: np.ndarray, nbrs: list, d_min: float,
               room_low: np.ndarray, room_high: np.ndarray):
        n = len(positions)
        new_pair = np.zeros(n, dtype=bool)
        new_room = np.zeros(n, dtype=bool)
        current = set()
        for i in range(n):
            for j in nbrs[i]:
                if np.linalg.norm(positions[i] - positions[j]) < d_min:
                    current.add(frozenset((i, int(j))))
        for pair in current - self.active_pairs:
            for m in pair:
                new_pair[m] = True
        self.active_pairs = current
        outside = np.any((positions <= room_low) | (positions >= room_high), axis=1)
        for i in range(n):
            if outside[i] and i not in self.active_room:
                new_room[i] = True
        self.active_room = {i for i in range(n) if outside[i]}
        return new_pair, new_room


# ---------------------------------------------------------------------------
# the environment


@dataclass(frozen=True)
class EnvConfig:
    k_neighbors: int = 7
    episode_seconds: float = 15.0
    success_radius: float = 0.25
    d_min: float = 0.1
    d_prox: float = 0.6
    neighbor_mode: str = "knn"   # knn | epsilon
    epsilon: float = 2.0
    init_attitude_jitter_deg: float = 10.0
    contain_walls: bool = True   # clamp positions at the walls (inelastic bounce)
    wall_restitution: float = 0.3
    spawn_margin: float = 0.1    # interior fraction of room span kept clear at reset
    escape_margin: float = 5.0   # m beyond the room at which episodes end

    def __post_init__(self):
        if self.neighbor_mode not in ("knn", "epsilon"):
            raise ValueError(f"neighbor_mode must be knn or epsilon, got {self.neighbor_mode!r}")


class SwarmEnv:
    """Single-owner mutable episode state; one instance per rollout worker."""

    def __init__(self, scenario: Scenario, quad_params: QuadParams,
                 env_cfg: EnvConfig = EnvConfig(), seed: int = 0):
        self.scenario = scenario
        self.params = quad_params
        self.cfg = env_cfg
        self.seed = seed
        self.coeffs = RewardCoeffs.for_timestep(quad_params.dt_ctrl,
                                                d_min=env_cfg.d_min, d_prox=env_cfg.d_prox)
        self._episode = -1
        self.state: SwarmState | None = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> SwarmState:
        self._episode += 1
        rng = np.random.default_rng([self.seed, self._episode])
        n = self.scenario.num_agents
        pos = self._spawn_positions(rng, n)
        targets = self.scenario.targets(0.0)
        agents = []
        for i in range(n):
            axis = rng.normal(size=3)
            angle = rng.uniform(0.0, np.deg2rad(self.cfg.init_attitude_jitter_deg))
            R = rotation_from_axis_angle(axis, angle).rotation
            agents.append(QuadState(pos[i], np.zeros(3), R, np.zeros(3), targets[i]))
        self.state = SwarmState(agents, 0.0, self.scenario)
        self.contacts = ContactTracker()
        self._steps = 0
        return self.state

    def _spawn_positions(self, rng: np.random.Generator, n: int) -> np.ndarray:
        low, high = self.scenario.room_low, self.scenario.room_high
        margin = self.cfg.spawn_margin * (high - low)
        pts = np.empty((n, 3))
        for i in range(n):
            for _ in range(1000):
                cand = rng.uniform(low + margin, high - margin)
                if i == 0 or np.linalg.norm(pts[:i] - cand, axis=1).min() >= self.cfg.d_prox:
                    pts[i] = cand
                    break
            else:
                pts[i] = rng.uniform(low + margin, high - margin)
        return pts

    @property
    def max_steps(self) -> int:
        return int(round(self.cfg.episode_seconds / self.params.dt_ctrl))

    def neighbor_sets(self) -> list:
        if self.cfg.neighbor_mode == "epsilon":
            return neighborhoods_epsilon(self.state, self.cfg.epsilon)
        return neighborhoods(self.state, self.cfg.k_neighbors)

    def local_graphs(self) -> list:
        nbrs = self.neighbor_sets()
        return [_graph_for(self.state, i, nbrs[i]) for i in range(len(nbrs))]

    # -- stepping -----------------------------------------------------------

    def step(self, raw_actions: np.ndarray):
        """Advance one control period under raw policy outputs (N,4).

        Returns (state, rewards, done, info); done marks episode truncation
        or divergence, and info carries per-agent collision flags.
        """
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        s = self.state
        n = len(s.agents)
        raw_actions = np.asarray(raw_actions, dtype=np.float64).reshape(n, 4)
        thrusts = normalize_action(raw_actions)

        x = np.stack([a.position for a in s.agents])
        v = np.stack([a.velocity for a in s.agents])
        R = np.stack([a.attitude for a in s.agents])
        w = np.stack([a.body_rates for a in s.agents])
        diverged = False
        for _ in range(self.params.substeps):
            x, v, R, w = _substep_arrays(x, v, R, w, thrusts, self.params, self.params.dt_phys)
        if not (np.isfinite(x).all() and np.isfinite(v).all()
                and np.isfinite(R).all() and np.isfinite(w).all()):
            diverged = True
            x = np.nan_to_num(x)
            v = np.nan_to_num(v)
            R = _orthonormalize_batch(np.where(np.isfinite(R), R, np.eye(3)))
            w = np.nan_to_num(w)

        if self.cfg.contain_walls:
            lo, hi = self.scenario.room_low, self.scenario.room_high
            below = x < lo
            above = x > hi
            hit = below | above
            if hit.any():
                x = np.clip(x, lo, hi)
                v = np.where(hit, -self.cfg.wall_restitution * v, v)

        t_next = s.time + self.params.dt_ctrl
        targets = self.scenario.targets(t_next)
        agents = [QuadState(x[i], v[i], R[i], w[i], targets[i]) for i in range(n)]
        self.state = SwarmState(agents, t_next, self.scenario)
        self._steps += 1

        nbrs = self.neighbor_sets()
        pair_hits, room_hits = self.contacts.update(
            x, nbrs, self.cfg.d_min, self.scenario.room_low, self.scenario.room_high)
        rewards = []
        for i in range(n):
            rewards.append(reward(agents[i], x[nbrs[i]], raw_actions[i], self.coeffs,
                                  charge_collision=bool(pair_hits[i] or room_hits[i])))
        escaped = bool(np.any((x < self.scenario.room_low - self.cfg.escape_margin)
                              | (x > self.scenario.room_high + self.cfg.escape_margin)))
        done = diverged or escaped or self._steps >= self.max_steps
        info = {
            "agent_collision": pair_hits,
            "room_collision": room_hits,
            "diverged": diverged,
            "distances": np.linalg.norm(x - targets, axis=1),
        }
        return self.state, rewards, done, info


# ---------------------------------------------------------------------------
# episode traces, metrics and export


@dataclass
class EpisodeTrace:
    times: np.ndarray          # (T,)
    positions: np.ndarray      # (T, N, 3)
    velocities: np.ndarray
    attitudes: np.ndarray      # (T, N, 3, 3)
    body_rates: np.ndarray
    targets: np.ndarray
    actions: np.ndarray        # (T, N, 4) raw policy outputs
    reward_parts: np.ndarray   # (T, N, 4): position, collision, stability, total
    collision_flags: np.ndarray  # (T, N, 2): agent hit, room hit

    @property
    def num_agents(self) -> int:
        return self.positions.shape[1]


def rollout_episode(env: SwarmEnv, act_fn) -> EpisodeTrace:
    """Run one full episode; act_fn(state, env) -> raw actions (N,4)."""
    state = env.reset()
    rows = {k: [] for k in ("t", "x", "v", "R", "w", "tgt", "u", "r", "c")}
    done = False
    while not done:
        u = act_fn(state, env)
        state, rewards, done, info = env.step(u)
        rows["t"].append(state.time)
        rows["x"].append(np.stack([a.position for a in state.agents]))
        rows["v"].append(np.stack([a.velocity for a in state.agents]))
        rows["R"].append(np.stack([a.attitude for a in state.agents]))
        rows["w"].append(np.stack([a.body_rates for a in state.agents]))
        rows["tgt"].append(np.stack([a.target for a in state.agents]))
        rows["u"].append(np.asarray(u))
        rows["r"].append(np.array([[r.position, r.collision, r.stability, r.total]
                                   for r in rewards]))
        rows["c"].append(np.stack([info["agent_collision"], info["room_collision"]], axis=1))
    return EpisodeTrace(np.asarray(rows["t"]), np.stack(rows["x"]), np.stack(rows["v"]),
                        np.stack(rows["R"]), np.stack(rows["w"]), np.stack(rows["tgt"]),
                        np.stack(rows["u"]), np.stack(rows["r"]),
                        np.stack(rows["c"]).astype(bool))


def episode_metrics(trace: EpisodeTrace, success_radius: float = 0.25) -> dict:
    """Five evaluation numbers for one episode."""
    if trace.times.size == 0:
        raise ValueError("empty episode trace")
    n = trace.num_agents
    mean_reward = float(trace.reward_parts[:, :, 3].sum(axis=0).mean())
    final_dist = np.linalg.norm(trace.positions[-1] - trace.targets[-1], axis=1)
    agent_hits = trace.collision_flags[:, :, 0]
    room_hits = trace.collision_flags[:, :, 1]
    collided = (agent_hits | room_hits).any(axis=0)
    success = (final_dist <= success_radius) & ~collided
    return {
        "mean_reward": mean_reward,
        "mean_final_distance": float(final_dist.mean()),
        "collisions": float(agent_hits.sum() / 2.0 + room_hits.sum()),
        "success_rate": float(success.mean()),
        "inter_agent_collision_rate": float(agent_hits.any(axis=0).mean()),
        "num_agents": n,
    }


def aggregate_metrics(per_episode: list) -> dict:
    """Average the five metrics over episodes."""
    if not per_episode:
        raise ValueError("no episodes to aggregate")
    keys = ("mean_reward", "mean_final_distance", "collisions",
            "success_rate", "inter_agent_collision_rate")
    return {k: float(np.mean([m[k] for m in per_episode])) for k in keys} | {
        "episodes": len(per_episode)}


TRACE_HEADER = (
    ["t", "agent"]
    + [f"x{i}" for i in range(3)] + [f"v{i}" for i in range(3)]
    + [f"R{i}{j}" for i in range(3) for j in range(3)]
    + [f"w{i}" for i in range(3)] + [f"xd{i}" for i in range(3)]
    + [f"u{i}" for i in range(4)]
    + ["r_position", "r_collision", "r_stability", "r_total"]
    + ["hit_agent", "hit_room"]
)


def export_trace_csv(trace: EpisodeTrace, path) -> None:
    """One row per (step, agent); rotation is serialized row-major."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for k, t in enumerate(trace.times):
            for i in range(trace.num_agents):
                row = ([f"{t:.6f}", i]
                       + list(trace.positions[k, i]) + list(trace.velocities[k, i])
                       + list(trace.attitudes[k, i].reshape(9))
                       + list(trace.body_rates[k, i]) + list(trace.targets[k, i])
                       + list(trace.actions[k, i]) + list(trace.reward_parts[k, i])
                       + [int(trace.collision_flags[k, i, 0]), int(trace.collision_flags[k, i, 1])])
                writer.writerow(row)


def export_metrics_jsonl(per_episode: list, path) -> None:
    with open(path, "w") as fh:
        for i, m in enumerate(per_episode):
            fh.write(json.dumps({"episode": i} | m) + "\n")
