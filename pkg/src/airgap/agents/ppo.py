"""Clipped-surrogate policy optimization with GAE advantages.

The continuous policy is a diagonal Gaussian whose mean is the network's
Tanh head and whose log standard deviation is a learned state-independent
vector. Gradients of the clipped surrogate, the value loss, and the log-std
are computed analytically and pushed through the network's backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..nn import Adam, PolicyNetwork

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    rollout_horizon: int = 2048
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    log_std_init: float = math.log(0.5)
    checkpoint_every: int = 50_000
    total_steps: int = 200_000
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.rollout_horizon < self.minibatch_size:
            raise ValueError("rollout_horizon must be >= minibatch_size")

    @classmethod
    def from_dict(cls, raw: dict | None) -> "PpoConfig":
        raw = raw or {}
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown ppo keys: {sorted(unknown)}")
        return cls(**raw)


class RolloutBuffer:
    """Fixed-horizon on-policy storage."""

    def __init__(self, horizon: int, obs_dim: int):
        self.horizon = horizon
        self.obs = np.zeros((horizon, obs_dim))
        self.actions = np.zeros((horizon, 2))
        self.log_probs = np.zeros(horizon)
        self.rewards = np.zeros(horizon)
        self.values = np.zeros(horizon)
        self.terminals = np.zeros(horizon)
        self.count = 0

    @property
    def full(self) -> bool:
        return self.count >= self.horizon

    def push(self, obs, action, log_prob, reward, value, terminal) -> None:
        i = self.count
        self.obs[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.terminals[i] = 1.0 if terminal else 0.0
        self.count += 1

    def reset(self) -> None:
        self.count = 0


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray,
                      log_std: np.ndarray) -> np.ndarray:
    std = np.exp(log_std)
    z = (actions - mean) / std
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=-1)


def compute_gae(rewards: np.ndarray, values: np.ndarray, terminals: np.ndarray,
                last_value: float, gamma: float, lam: float):
    """Generalized advantage estimation over one rollout segment.

    `terminals[t]` marks that the episode ended at step t, so no value
    bootstraps across the boundary. Returns (advantages, returns).
    """
    n = len(rewards)
    adv = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        next_value = last_value if t == n - 1 else values[t + 1]
        nonterminal = 1.0 - terminals[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
    return adv, adv + values


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip_eps: float):
    """Per-sample surrogate min(r*A, clip(r)*A) and its d/d_ratio.

    The gradient follows the selected branch; the clipped branch contributes
    zero gradient outside the clip band.
    """
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    s1 = ratio * adv
    s2 = clipped * adv
    surr = np.minimum(s1, s2)
    in_band = (ratio >= 1.0 - clip_eps) & (ratio <= 1.0 + clip_eps)
    dsurr = np.where(s1 <= s2, adv, np.where(in_band, adv, 0.0))
    return surr, dsurr


def ppo_update(net: PolicyNetwork, buffer: RolloutBuffer, last_value: float,
               cfg: PpoConfig, optimizer: Adam, rng: np.random.Generator,
               n_rays: int) -> dict:
    """Run the clipped-surrogate epochs over one full rollout."""
    n = buffer.count
    if n == 0:
        raise ValueError("empty rollout")
    adv, returns = compute_gae(buffer.rewards[:n], buffer.values[:n],
                               buffer.terminals[:n], last_value,
                               cfg.gamma, cfg.gae_lambda)
    if not np.all(np.isfinite(adv)):
        return {"aborted": True, "policy_loss": math.nan, "value_loss": math.nan}
    adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)

    obs = buffer.obs[:n]
    actions = buffer.actions[:n]
    old_log_probs = buffer.log_probs[:n]
    policy_losses, value_losses = [], []

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            b = len(idx)
            d, v, p = obs[idx, :n_rays], obs[idx, n_rays:n_rays + 3], obs[idx, n_rays + 3:]
            out = net.forward(d, v, p)
            mean, value = out["mean"], out["value"][:, 0]
            log_std = net.log_std
            std = np.exp(log_std)
            a = actions[idx]
            z = (a - mean) / std
            log_probs = (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=1)
            ratio = np.exp(log_probs - old_log_probs[idx])
            surr, dsurr_dratio = clipped_surrogate(ratio, adv_norm[idx], cfg.clip_eps)
            policy_loss = -surr.mean()
            verr = value - returns[idx]
            value_loss = float((verr * verr).mean())

            # d(-surr)/d_mean = -dsurr/dr * r * dlogp/d_mean, averaged over batch
            dlogp_dmean = z / std                       # (b, 2)
            coeff = (-dsurr_dratio * ratio / b)[:, None]
            d_mean = coeff * dlogp_dmean
            dlogp_dlogstd = z * z - 1.0                 # (b, 2)
            d_log_std = (coeff * dlogp_dlogstd).sum(axis=0)
            d_value = (cfg.value_coef * 2.0 * verr / b)[:, None]

            net.backward({"mean": d_mean, "value": d_value})
            net.d_log_std = d_log_std
            optimizer.step()
            policy_losses.append(float(policy_loss))
            value_losses.append(value_loss)

    return {"aborted": False,
            "policy_loss": float(np.mean(policy_losses)),
            "value_loss": float(np.mean(value_losses))}


def sample_action(net: PolicyNetwork, obs_vec: np.ndarray, rng: np.random.Generator,
                  n_rays: int):
    """Draw an action from the current Gaussian policy.

    Returns (action clipped to [-1, 1]^2, log_prob of the unclipped draw,
    value estimate).
    """
    d, v, p = obs_vec[:n_rays], obs_vec[n_rays:n_rays + 3], obs_vec[n_rays + 3:]
    out = net.forward(d[None, :], v[None, :], p[None, :])
    mean = out["mean"][0]
    value = float(out["value"][0, 0])
    std = np.exp(net.log_std)
    action = mean + std * rng.standard_normal(2)
    log_prob = float(gaussian_log_prob(action[None, :], mean[None, :], net.log_std)[0])
    return np.clip(action, -1.0, 1.0), action, log_prob, value
