"""Equivariant swarm control: groups, autodiff, quadrotor simulation,
symmetry auditing, and PPO training."""

__version__ = "0.1.0"
