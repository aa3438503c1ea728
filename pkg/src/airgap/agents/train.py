"""Training orchestration: episode loop, latency injection, checkpoints, resume.

A run directory holds the resolved config snapshot, step checkpoints
(checkpoints/step_<n>.ckpt), per-zone checkpoints (zones/zone_<k>.ckpt), and
train_log.csv. Interrupted runs resume from the newest step checkpoint; the
resumed run finishes at the same final checkpoint step as an uninterrupted
one.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from ..dynamics import ActionSpace, DynamicsParams
from ..energy import EnergyCoefficients
from ..envgen import CurriculumZone, EnvConfig, derive_seed, generate, stream
from ..latency import LatencyModel, scale_action_space
from ..nn import (OUTPUT_CONTINUOUS, OUTPUT_DISCRETE, Adam, PolicyNetwork,
                  PolicyTemplate, build_policy, load_checkpoint, save_checkpoint)
from .curriculum import CurriculumState, curriculum_advance
from .dqn import DqnConfig, dqn_update, epsilon_at
from .ppo import PpoConfig, RolloutBuffer, ppo_update, sample_action
from .replay import ReplayBuffer
from .reward import RewardParams
from .rollout import NavEpisode

log = logging.getLogger(__name__)

LOG_HEADER = "episode,steps,reward,normalized_reward,outcome,zone,energy_kj"
ROLLING_WINDOW = 100


class ResumeMismatchError(RuntimeError):
    """A resume checkpoint does not match the requested template/env."""


@dataclass
class TrainResult:
    run_dir: str
    final_checkpoint: str
    steps: int
    episodes: int
    log_path: str


def _episode_log_rows(episode_log: list[dict]) -> list[str]:
    rewards = [e["reward"] for e in episode_log]
    if rewards:
        lo, hi = min(rewards), max(rewards)
        span = (hi - lo) or 1.0
        norm = [(r - lo) / span for r in rewards]
    else:
        norm = []
    rows = []
    acc = 0.0
    for i, entry in enumerate(episode_log):
        acc += norm[i]
        if i >= ROLLING_WINDOW:
            acc -= norm[i - ROLLING_WINDOW]
        rolled = acc / min(i + 1, ROLLING_WINDOW)
        rows.append(f"{entry['episode']},{entry['steps']},{entry['reward']:.4f},"
                    f"{rolled:.6f},{entry['outcome']},{entry['zone']},"
                    f"{entry['energy_kj']:.4f}")
    return rows


def _write_log(path, episode_log: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOG_HEADER + "\n")
        for row in _episode_log_rows(episode_log):
            fh.write(row + "\n")


def _latest_checkpoint(ckpt_dir: str) -> tuple[str, int] | None:
    if not os.path.isdir(ckpt_dir):
        return None
    best = None
    for name in os.listdir(ckpt_dir):
        m = re.fullmatch(r"step_(\d+)\.ckpt", name)
        if m:
            n = int(m.group(1))
            if best is None or n > best[1]:
                best = (os.path.join(ckpt_dir, name), n)
    return best


def train(agent_kind: str, env_config: EnvConfig, template: PolicyTemplate,
          run_dir: str, *,
          dyn_params: DynamicsParams | None = None,
          energy_coeffs: EnergyCoefficients | None = None,
          latency_model: LatencyModel | None = None,
          v_cap: float | None = None,
          curriculum: bool = False,
          dqn_config: DqnConfig | None = None,
          ppo_config: PpoConfig | None = None,
          run_seed: int = 0,
          resume: bool = False,
          total_steps: int | None = None,
          log_every_episodes: int = 200) -> TrainResult:
    """Train a policy; see the agent config dataclasses for hyperparameters.

    When a latency model is given, every decision during training suffers a
    sampled stale interval (t1 + t2) before the new action applies; v_cap,
    when set, rescales the action space so no command exceeds it.
    """
    if agent_kind not in ("dqn", "ppo"):
        raise ValueError(f"agent_kind must be 'dqn' or 'ppo', got {agent_kind!r}")
    dyn = dyn_params or DynamicsParams()
    coeffs = energy_coeffs or EnergyCoefficients()
    cfg = (dqn_config or DqnConfig()) if agent_kind == "dqn" else (ppo_config or PpoConfig())
    if total_steps is None:
        total_steps = cfg.total_steps

    space = ActionSpace(t3=dyn.t3)
    if v_cap is not None:
        space = scale_action_space(space, v_cap)
    reward_params = RewardParams(v_max=space.v_max, t_max=space.t3)

    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    zone_dir = os.path.join(run_dir, "zones")
    os.makedirs(ckpt_dir, exist_ok=True)
    os.makedirs(zone_dir, exist_ok=True)
    log_path = os.path.join(run_dir, "train_log.csv")

    output_spec = OUTPUT_DISCRETE if agent_kind == "dqn" else OUTPUT_CONTINUOUS
    env_hash = env_config.content_hash()

    step = 0
    episode_index = 0
    adam_t = 0
    curr = CurriculumState() if curriculum else None
    episode_log: list[dict] = []
    net: PolicyNetwork | None = None
    opt_state_arrays = None

    if resume:
        latest = _latest_checkpoint(ckpt_dir)
        if latest is None:
            raise ResumeMismatchError(f"no checkpoint to resume from in {ckpt_dir}")
        path, step = latest
        net, meta, extras = load_checkpoint(path)
        if net.template != template:
            raise ResumeMismatchError(
                f"checkpoint template {net.template} != requested {template}")
        if meta.get("env_hash") != env_hash:
            raise ResumeMismatchError("checkpoint was trained on a different env config")
        if meta.get("agent_kind") != agent_kind:
            raise ResumeMismatchError("checkpoint agent kind mismatch")
        episode_index = int(meta.get("episode_index", 0))
        adam_t = int(meta.get("adam_t", 0))
        if curriculum:
            curr = CurriculumState(int(meta.get("zone", 0)),
                                   meta.get("curriculum_window", []))
        opt_state_arrays = extras or None
        log.info("resuming from %s at step %d", path, step)

    if net is None:
        net = build_policy(template, output_spec,
                           init_seed=derive_seed(run_seed, "init"))
    optimizer = Adam(net, lr=cfg.learning_rate)
    if opt_state_arrays:
        try:
            optimizer.load_state_arrays(opt_state_arrays, adam_t)
        except KeyError:
            log.warning("optimizer state missing from checkpoint; starting fresh")

    def checkpoint_path(n: int) -> str:
        return os.path.join(ckpt_dir, f"step_{n}.ckpt")

    def save(n: int, into: str | None = None) -> str:
        meta = {
            "agent_kind": agent_kind,
            "env_hash": env_hash,
            "step": n,
            "episode_index": episode_index,
            "zone": curr.current_zone if curr else None,
            "curriculum_window": list(curr.window) if curr else [],
            "v_cap": v_cap,
            "t3": space.t3,
            "run_seed": run_seed,
            "adam_t": optimizer.t,
        }
        path = into or checkpoint_path(n)
        save_checkpoint(net, path, metadata=meta,
                        extra_arrays=optimizer.state_arrays())
        _write_log(log_path, episode_log)
        return path

    exploration_rng = stream(run_seed, "explore")
    latency_rng = stream(run_seed, "latency")
    replay_rng = stream(run_seed, "replay")

    target_net = net.copy() if agent_kind == "dqn" else None
    buffer = (ReplayBuffer(cfg.replay_capacity, net.input_size)
              if agent_kind == "dqn" else RolloutBuffer(cfg.rollout_horizon, net.input_size))
    n_rays = template.n_rays

    arena_length = env_config.arena_size[0]
    last_logged = 0
    while step < total_steps:
        zone = (CurriculumZone.for_arena(curr.current_zone, arena_length)
                if curr else None)
        instance = generate(env_config, episode_index, zone)
        ep = NavEpisode(instance, dyn, space, coeffs, reward_params,
                        latency_model, latency_rng)
        obs_vec = ep.obs_vector()

        while not ep.done and step < total_steps:
            if agent_kind == "dqn":
                if float(exploration_rng.random()) < epsilon_at(step, cfg):
                    action = int(exploration_rng.integers(space.n_actions))
                else:
                    action = net.greedy_action(ep.obs)
                next_vec, reward, done, info = ep.step(action)
                # bootstrap through the step-budget truncation; only real
                # terminals stop the value recursion
                terminal = done and ep.outcome != "step_exhausted"
                buffer.push(obs_vec, action, reward, next_vec, terminal)
                step += 1
                if (step >= cfg.learn_start and len(buffer) >= cfg.batch_size
                        and step % cfg.update_every == 0):
                    dqn_update(net, target_net, buffer.sample(cfg.batch_size, replay_rng),
                               cfg, optimizer, n_rays)
                if step % cfg.target_sync_every == 0:
                    target_net.load_flat(net.flat_params())
            else:
                env_action, raw_action, log_prob, value = sample_action(
                    net, obs_vec, exploration_rng, n_rays)
                next_vec, reward, done, info = ep.step(env_action)
                terminal = done and ep.outcome != "step_exhausted"
                buffer.push(obs_vec, raw_action, log_prob, reward, value, terminal)
                step += 1
                if buffer.full:
                    if done:
                        last_value = 0.0
                    else:
                        out = net.forward(next_vec[None, :n_rays],
                                          next_vec[None, n_rays:n_rays + 3],
                                          next_vec[None, n_rays + 3:])
                        last_value = float(out["value"][0, 0])
                    ppo_update(net, buffer, last_value, cfg, optimizer,
                               replay_rng, n_rays)
                    buffer.reset()
            obs_vec = next_vec
            if step % cfg.checkpoint_every == 0:
                save(step)

        if ep.done:
            episode_log.append({
                "episode": episode_index,
                "steps": ep.steps,
                "reward": ep.total_reward,
                "outcome": ep.outcome,
                "zone": curr.current_zone if curr else -1,
                "energy_kj": ep.energy.energy_joules / 1000.0,
            })
            if curr is not None:
                curr, advanced = curriculum_advance(curr, ep.outcome == "success")
                if advanced:
                    save(step, into=os.path.join(zone_dir,
                                                 f"zone_{curr.current_zone}.ckpt"))
            episode_index += 1
            if episode_index - last_logged >= log_every_episodes:
                last_logged = episode_index
                recent = episode_log[-log_every_episodes:]
                rate = 100.0 * sum(e["outcome"] == "success" for e in recent) / len(recent)
                log.info("step %d episode %d recent success %.1f%%",
                         step, episode_index, rate)

    final = save(step)
    return TrainResult(run_dir=run_dir, final_checkpoint=final, steps=step,
                       episodes=episode_index, log_path=log_path)
