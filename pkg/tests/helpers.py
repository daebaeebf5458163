"""Shared builders for the test suite."""

import numpy as np

from equiswarm import autodiff as ad
from equiswarm.autodiff import Tensor
from equiswarm.env import LocalGraph
from equiswarm.groups import GroupElement, random_rotation
from equiswarm.policy import gaussian_entropy, gaussian_log_prob
from equiswarm.quad import QuadState


def random_quad_state(rng, spread=4.0):
    R = random_rotation(rng).rotation
    return QuadState(rng.uniform(0, spread, 3), rng.normal(size=3), R,
                     rng.normal(size=3), rng.uniform(0, spread, 3))


def random_local_graph(rng, n_nodes, spread=4.0):
    states = [random_quad_state(rng, spread) for _ in range(n_nodes)]
    poses = [GroupElement(s.attitude, s.position) for s in states]
    return LocalGraph(0, np.arange(n_nodes), states, poses)


class BanditActorCritic:
    """Single-state 1-D Gaussian policy with a learnable value baseline;
    the smallest object the PPO update machinery can drive."""

    def __init__(self):
        self.params = {
            "mean": Tensor(np.zeros(1), requires_grad=True),
            "log_std": Tensor(np.log([0.5]), requires_grad=True),
            "value": Tensor(np.zeros(1), requires_grad=True),
        }

    def named_parameters(self):
        return self.params

    def snapshot(self):
        c = BanditActorCritic()
        for k, v in self.params.items():
            c.params[k] = Tensor(v.data.copy())
        return c

    def pack(self, obs_list):
        return np.zeros((len(obs_list), 1))

    @staticmethod
    def take(packed, idx):
        return packed[idx]

    def _broadcast(self, packed, name):
        ones = Tensor(np.ones((len(packed), 1)))
        return ad.matmul(ones, ad.reshape(self.params[name], (1, 1)))

    def act(self, obs_list, rng, deterministic=False):
        n = len(obs_list)
        mean = float(self.params["mean"].data[0])
        std = float(np.exp(self.params["log_std"].data[0]))
        u = np.full((n, 1), mean) if deterministic else rng.normal(mean, std, size=(n, 1))
        z = (u - mean) / std
        logp = -0.5 * z[:, 0] ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi)
        values = np.full(n, float(self.params["value"].data[0]))
        return u, logp, values

    def evaluate(self, packed, actions):
        mean = self._broadcast(packed, "mean")
        logp = gaussian_log_prob(mean, self.params["log_std"], actions)
        entropy = gaussian_entropy(self.params["log_std"])
        value = ad.reshape(self._broadcast(packed, "value"), (len(packed),))
        return logp, entropy, value

    def values(self, obs_list):
        return np.full(len(obs_list), float(self.params["value"].data[0]))
