"""Deep Q-learning update: Huber loss on one-step targets, frozen target net."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..nn import Adam, PolicyNetwork


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    replay_capacity: int = 50_000
    batch_size: int = 32
    target_sync_every: int = 1_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 30_000
    learn_start: int = 1_000
    update_every: int = 1      # env steps between gradient updates
    reward_scale: float = 0.01  # update-side scaling; brings targets to O(10)
    checkpoint_every: int = 50_000
    total_steps: int = 200_000
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        for name in ("replay_capacity", "batch_size", "target_sync_every",
                     "epsilon_decay_steps", "learn_start", "update_every",
                     "checkpoint_every", "total_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, raw: dict | None) -> "DqnConfig":
        raw = raw or {}
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown dqn keys: {sorted(unknown)}")
        return cls(**raw)


def epsilon_at(step: int, cfg: DqnConfig) -> float:
    """Linear exploration schedule from epsilon_start down to epsilon_end."""
    frac = min(max(step, 0) / cfg.epsilon_decay_steps, 1.0)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def _huber(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # value and derivative of the unit-threshold Huber loss
    small = np.abs(delta) <= 1.0
    value = np.where(small, 0.5 * delta * delta, np.abs(delta) - 0.5)
    grad = np.clip(delta, -1.0, 1.0)
    return value, grad


def dqn_targets(rewards: np.ndarray, terminals: np.ndarray,
                next_q: np.ndarray, gamma: float) -> np.ndarray:
    """One-step targets: r for terminal transitions, else r + gamma*max_a' Q'."""
    return rewards + gamma * next_q.max(axis=1) * (1.0 - terminals)


def dqn_update(net: PolicyNetwork, target_net: PolicyNetwork, batch,
               cfg: DqnConfig, optimizer: Adam, n_rays: int) -> float:
    """One gradient step on a replay batch; returns the Huber loss.

    Rewards are multiplied by cfg.reward_scale inside the update so targets
    have workable magnitude under the unit-threshold Huber loss; the stored
    and logged rewards are untouched.
    """
    obs, actions, rewards, next_obs, terminals = batch
    batch_size = obs.shape[0]
    d, v, p = _split(obs, n_rays)
    nd, nv, npos = _split(next_obs, n_rays)

    next_q = target_net.forward(nd, nv, npos)["q"]
    targets = dqn_targets(rewards * cfg.reward_scale, terminals, next_q, cfg.gamma)

    q = net.forward(d, v, p)["q"]
    q_sa = q[np.arange(batch_size), actions]
    delta = q_sa - targets
    loss_vals, dloss = _huber(delta)

    upstream = np.zeros_like(q)
    upstream[np.arange(batch_size), actions] = dloss / batch_size
    net.backward({"q": upstream})
    optimizer.step()
    return float(loss_vals.mean())


def _split(obs: np.ndarray, n_rays: int):
    return obs[:, :n_rays], obs[:, n_rays:n_rays + 3], obs[:, n_rays + 3:]
