"""Clipped-PPO trainer over synchronous rollout workers.

Workers are independent environment instances stepped in lockstep; one
policy snapshot serves a whole collection phase, and actions for all
workers are batched through a single network call per step. The learner
is the only parameter mutator. Rollouts record pre-clip Gaussian samples
and their log-probs; the [0,1] thrust clip is treated as part of the
environment.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step
from . import autodiff as ad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    lr_warmup_updates: int = 0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    rollout_length: int = 128
    epochs: int = 5
    minibatch_count: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    max_grad_norm: float = 5.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.995
    adam_eps: float = 2e-6
    workers: int = 4
    total_steps: int = 500_000
    seed: int = 0
    checkpoint_every: int = 50

    def __post_init__(self):
        for name in ("learning_rate", "gamma", "gae_lambda", "clip_ratio",
                     "rollout_length", "epochs", "minibatch_count", "workers",
                     "total_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def batch_size(self, agents: int) -> int:
        return self.workers * agents * self.rollout_length

    def validate_for(self, agents: int) -> None:
        b = self.batch_size(agents)
        if b % self.minibatch_count:
            raise ValueError(f"batch size {b} not divisible by minibatch_count={self.minibatch_count}")


class RolloutBuffer:
    """Fixed-capacity (steps x streams) transition store; one stream per
    (worker, agent) pair."""

    def __init__(self, steps: int, streams: int, action_dim: int = 4):
        self.steps = steps
        self.streams = streams
        self.obs: list = [[None] * streams for _ in range(steps)]
        self.actions = np.zeros((steps, streams, action_dim))
        self.log_probs = np.zeros((steps, streams))
        self.rewards = np.zeros((steps, streams))
        self.values = np.zeros((steps, streams))
        self.dones = np.zeros((steps, streams))
        self.final_values = np.zeros(streams)
        self.advantages: np.ndarray | None = None
        self.returns: np.ndarray | None = None
        self._cursor = 0

    @property
    def capacity(self) -> int:
        return self.steps * self.streams

    @property
    def full(self) -> bool:
        return self._cursor == self.steps

    def add(self, obs_row, actions, log_probs, rewards, values, dones) -> None:
        t = self._cursor
        if t >= self.steps:
            raise RuntimeError("rollout buffer is full")
        self.obs[t] = list(obs_row)
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.dones[t] = dones
        self._cursor += 1

    def finalize(self, final_values, gamma: float = 0.99, lam: float = 0.95) -> None:
        if not self.full:
            raise RuntimeError("cannot finalize a partially filled buffer")
        self.final_values = np.asarray(final_values, dtype=np.float64)
        self.advantages, self.returns = gae(self.rewards, self.values, self.dones,
                                            gamma=gamma, lam=lam,
                                            final_values=self.final_values)

    def flat_obs(self) -> list:
        return [o for row in self.obs for o in row]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.actions).all() and np.isfinite(self.rewards).all()
                    and np.isfinite(self.values).all() and np.isfinite(self.log_probs).all())


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float = 0.99, lam: float = 0.95, final_values=None):
    """Generalized advantage estimation over (T, S) arrays.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    returns = A + V. Episode boundaries stop both recursions.
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    dones = np.atleast_2d(np.asarray(dones, dtype=np.float64))
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(f"gae: mismatched shapes {rewards.shape}, {values.shape}, {dones.shape}")
    steps, streams = rewards.shape
    boot = np.zeros(streams) if final_values is None else np.asarray(final_values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    nxt = boot
    acc = np.zeros(streams)
    for t in range(steps - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * nxt * live - values[t]
        acc = delta + gamma * lam * live * acc
        adv[t] = acc
        nxt = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    mu = adv.mean()
    sigma = adv.std()
    if sigma < 1e-12:
        return adv - mu
    return (adv - mu) / sigma


# ---------------------------------------------------------------------------
# collection


def collect(snapshot, envs: list, cfg: TrainConfig, rng: np.random.Generator,
            episode_log: list | None = None) -> RolloutBuffer:
    """Fill one rollout buffer by stepping every worker env in lockstep
    under an immutable policy snapshot."""
    agents = envs[0].scenario.num_agents
    streams = len(envs) * agents
    buf = RolloutBuffer(cfg.rollout_length, streams)
    for env in envs:
        if env.state is None:
            env.reset()
    for _ in range(cfg.rollout_length):
        graphs = []
        for env in envs:
            graphs.extend(env.local_graphs())
        actions, log_probs, values = snapshot.act(graphs, rng)
        rewards = np.zeros(streams)
        dones = np.zeros(streams)
        for w, env in enumerate(envs):
            sl = slice(w * agents, (w + 1) * agents)
            _, rews, done, _ = env.step(actions[sl])
            rewards[sl] = [r.total for r in rews]
            if episode_log is not None:
                _track_episode(episode_log, env, w, rews, done)
            if done:
                dones[sl] = 1.0
                env.reset()
        buf.add(graphs, actions, log_probs, rewards, values, dones)
    graphs = []
    for env in envs:
        graphs.extend(env.local_graphs())
    buf.finalize(snapshot.values(graphs), gamma=cfg.gamma, lam=cfg.gae_lambda)
    return buf


def _track_episode(episode_log: list, env, worker: int, rewards, done: bool) -> None:
    acc = getattr(env, "_episode_reward_acc", None)
    if acc is None:
        acc = np.zeros(env.scenario.num_agents)
    acc = acc + np.array([r.total for r in rewards])
    if done:
        dist = float(np.mean([np.linalg.norm(a.position - a.target) for a in env.state.agents]))
        episode_log.append({"worker": worker, "mean_agent_reward": float(acc.mean()),
                            "mean_final_distance": dist})
        acc = np.zeros(env.scenario.num_agents)
    env._episode_reward_acc = acc


# ---------------------------------------------------------------------------
# update


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    grad_norm: float
    aborted: bool = False


def ppo_update(buffer: RolloutBuffer, actor_critic, cfg: TrainConfig,
               adam_state: AdamState, rng: np.random.Generator) -> UpdateStats:
    """Clipped surrogate update: several epochs of shuffled minibatches
    over the full buffer. A non-finite buffer or loss aborts the update
    and leaves the previous parameters in place."""
    if buffer.advantages is None:
        raise RuntimeError("buffer not finalized; call finalize() first")
    if not buffer.is_finite():
        return UpdateStats(np.nan, np.nan, np.nan, 0.0, 0.0, aborted=True)
    params = actor_critic.named_parameters()
    backup = {k: v.data.copy() for k, v in params.items()}

    obs = actor_critic.pack(buffer.flat_obs())
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    logp_old = buffer.log_probs.reshape(-1)
    adv = normalize_advantages(buffer.advantages.reshape(-1))
    returns = buffer.returns.reshape(-1)

    total = len(logp_old)
    mb = total // cfg.minibatch_count
    losses, vlosses, ents, clips, gnorms = [], [], [], [], []
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(total)
            for k in range(cfg.minibatch_count):
                idx = order[k * mb:(k + 1) * mb]
                stats = _minibatch_step(actor_critic, obs, actions, logp_old, adv,
                                        returns, idx, cfg, adam_state)
                losses.append(stats[0]); vlosses.append(stats[1])
                ents.append(stats[2]); clips.append(stats[3]); gnorms.append(stats[4])
    except FloatingPointError:
        for k, v in params.items():
            v.data[...] = backup[k]
        return UpdateStats(np.nan, np.nan, np.nan, 0.0, 0.0, aborted=True)
    return UpdateStats(float(np.mean(losses)), float(np.mean(vlosses)),
                       float(np.mean(ents)), float(np.mean(clips)), float(np.mean(gnorms)))


def _minibatch_step(actor_critic, obs, actions, logp_old, adv, returns, idx,
                    cfg: TrainConfig, adam_state: AdamState):
    params = actor_critic.named_parameters()
    with Tape() as tape:
        logp, entropy, value = actor_critic.evaluate(actor_critic.take(obs, idx), actions[idx])
        ratio = ad.exp(ad.sub(logp, Tensor(logp_old[idx].astype(logp.dtype))))
        adv_t = Tensor(adv[idx].astype(logp.dtype))
        surr = ad.minimum(ad.mul(ratio, adv_t),
                          ad.mul(ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio), adv_t))
        policy_loss = ad.neg(ad.mean(surr))
        verr = ad.sub(value, Tensor(returns[idx].astype(value.dtype)))
        value_loss = ad.mean(ad.mul(verr, verr))
        loss = ad.add(ad.add(policy_loss, ad.mul(value_loss, cfg.value_coef)),
                      ad.mul(entropy, -cfg.entropy_coef))
        if not np.isfinite(loss.data):
            raise FloatingPointError("non-finite PPO loss")
        grads = tape.backward(loss)
    named_grads = {}
    for name, p in params.items():
        if p in grads:
            named_grads[name] = grads[p]
    gnorm = adam_step(params, named_grads, adam_state, lr=cfg.learning_rate,
                      beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
                      max_grad_norm=cfg.max_grad_norm)
    clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip_ratio))
    return (float(policy_loss.data), float(value_loss.data), float(entropy.data),
            clip_frac, gnorm)


# ---------------------------------------------------------------------------
# training loop


class Trainer:
    """Drives collect/update cycles and streams JSON-line metrics."""

    def __init__(self, actor_critic, envs: list, cfg: TrainConfig,
                 metrics_path=None, checkpoint_fn=None):
        agents = envs[0].scenario.num_agents
        per_update = cfg.rollout_length * len(envs) * agents
        if per_update % cfg.minibatch_count:
            raise ValueError(f"batch size {per_update} not divisible by "
                             f"minibatch_count={cfg.minibatch_count}")
        self._per_update = per_update
        self.ac = actor_critic
        self.envs = envs
        self.cfg = cfg
        self.adam_state = AdamState()
        self.metrics_path = metrics_path
        self.checkpoint_fn = checkpoint_fn
        self.history: list[dict] = []
        self._rng = np.random.default_rng(cfg.seed)

    def run(self) -> list:
        cfg = self.cfg
        n_updates = max(1, cfg.total_steps // self._per_update)
        steps_done = 0
        fh = open(self.metrics_path, "w") if self.metrics_path else None
        try:
            for update in range(1, n_updates + 1):
                episodes: list = []
                t0 = time.perf_counter()
                snapshot = self.ac.snapshot()
                buf = collect(snapshot, self.envs, cfg, self._rng, episodes)
                stats = ppo_update(buf, self.ac, cfg, self.adam_state, self._rng)
                steps_done += buf.capacity
                row = {
                    "update": update,
                    "steps": steps_done,
                    "mean_step_reward": float(buf.rewards.mean()),
                    "mean_episode_reward": (float(np.mean([e["mean_agent_reward"] for e in episodes]))
                                            if episodes else None),
                    "mean_final_distance": (float(np.mean([e["mean_final_distance"] for e in episodes]))
                                            if episodes else None),
                    "episodes_completed": len(episodes),
                    "policy_loss": stats.policy_loss,
                    "value_loss": stats.value_loss,
                    "entropy": stats.entropy,
                    "clip_fraction": stats.clip_fraction,
                    "grad_norm": stats.grad_norm,
                    "aborted": stats.aborted,
                    "seconds": time.perf_counter() - t0,
                }
                self.history.append(row)
                if fh:
                    fh.write(json.dumps(row) + "\n")
                    fh.flush()
                if stats.aborted:
                    raise FloatingPointError("PPO update aborted on non-finite loss")
                if self.checkpoint_fn and (update % cfg.checkpoint_every == 0 or update == n_updates):
                    self.checkpoint_fn(self.ac, update)
        finally:
            if fh:
                fh.close()
        return self.history
