"""Hyperparameter pilot for desk DQN learnability (dev tool, not shipped API)."""

import argparse
import json
import sys
import time

import numpy as np

from airgap import envgen
from airgap.agents.dqn import DqnConfig, dqn_update, epsilon_at
from airgap.agents.replay import ReplayBuffer
from airgap.agents.reward import RewardParams
from airgap.agents.rollout import NavEpisode
from airgap.dynamics import ActionSpace, DynamicsParams
from airgap.energy import EnergyCoefficients
from airgap.envgen import stream
from airgap.nn import Adam, PolicyTemplate, build_policy


def greedy_eval(net, cfg, space, dyn, coeffs, rp, n=50, zone=None):
    wins = 0
    for i in range(n):
        inst = envgen.generate(cfg, 1_000_000 + i, zone)
        ep = NavEpisode(inst, dyn, space, coeffs, rp)
        while not ep.done:
            ep.step(net.greedy_action(ep.obs))
        wins += ep.outcome == "success"
    return wins / n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=150_000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--update-every", type=int, default=2)
    ap.add_argument("--eps-decay", type=int, default=30_000)
    ap.add_argument("--eps-end", type=float, default=0.05)
    ap.add_argument("--gamma", type=float, default=0.99)
    ap.add_argument("--sync", type=int, default=1000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--replay", type=int, default=50_000)
    ap.add_argument("--sticky", type=float, default=0.0)
    ap.add_argument("--reward-scale", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--env", default='{"arena_size":[25,25,5],"seed":11}')
    ap.add_argument("--eval-every", type=int, default=10_000)
    ap.add_argument("--curriculum", action="store_true")
    ap.add_argument("--zone0", action="store_true")
    ap.add_argument("--tag", default="run")
    args = ap.parse_args()

    cfg = envgen.validate_config(json.loads(args.env))
    dc = DqnConfig(gamma=args.gamma, batch_size=args.batch, replay_capacity=args.replay,
                   target_sync_every=args.sync, epsilon_end=args.eps_end,
                   epsilon_decay_steps=args.eps_decay,
                   update_every=args.update_every, reward_scale=args.reward_scale,
                   learning_rate=args.lr, total_steps=args.steps)
    tmpl = PolicyTemplate(5, 32, 32)
    net = build_policy(tmpl, "discrete", init_seed=envgen.derive_seed(args.seed, "init"))
    target = net.copy()
    opt = Adam(net, lr=dc.learning_rate)
    buf = ReplayBuffer(dc.replay_capacity, net.input_size)
    ex_rng = stream(args.seed, "explore")
    rp_rng = stream(args.seed, "replay")
    space = ActionSpace()
    dyn = DynamicsParams()
    coeffs = EnergyCoefficients()
    rp = RewardParams()

    from airgap.agents.curriculum import CurriculumState, curriculum_advance
    from airgap.envgen import CurriculumZone
    curr = CurriculumState() if args.curriculum else None
    fixed_zone = CurriculumZone.for_arena(0, cfg.arena_size[0]) if args.zone0 else None

    t0 = time.time()
    step = 0
    episode = 0
    while step < args.steps:
        zone = (CurriculumZone.for_arena(curr.current_zone, cfg.arena_size[0])
                if curr else fixed_zone)
        inst = envgen.generate(cfg, episode, zone)
        ep = NavEpisode(inst, dyn, space, coeffs, rp)
        prev_a = None
        while not ep.done and step < args.steps:
            eps = epsilon_at(step, dc)
            if float(ex_rng.random()) < eps:
                if prev_a is not None and float(ex_rng.random()) < args.sticky:
                    a = prev_a
                else:
                    a = int(ex_rng.integers(25))
            else:
                a = net.greedy_action(ep.obs)
            prev_a = a
            ov = ep.obs_vector()
            nv, r, done, info = ep.step(a)
            buf.push(ov, a, r, nv, done and ep.outcome != "step_exhausted")
            step += 1
            if step >= dc.learn_start and step % dc.update_every == 0:
                dqn_update(net, target, buf.sample(dc.batch_size, rp_rng), dc, opt, 32)
            if step % dc.target_sync_every == 0:
                target.load_flat(net.flat_params())
            if step % args.eval_every == 0:
                sr = greedy_eval(net, cfg, space, dyn, coeffs, rp, zone=fixed_zone if args.zone0 else None)
                zmsg = f" zone {curr.current_zone} win {curr.success_fraction():.2f}" if curr else ""
                print(f"[{args.tag}] step {step} ep {episode} t {time.time()-t0:.0f}s "
                      f"greedy_sr {sr:.2f}{zmsg}", flush=True)
        if curr is not None and ep.done:
            curr, advanced = curriculum_advance(curr, ep.outcome == "success")
            if advanced:
                print(f"[{args.tag}] ZONE ADVANCE -> {curr.current_zone} at step {step} "
                      f"episode {episode}", flush=True)
        episode += 1
    sr = greedy_eval(net, cfg, space, dyn, coeffs, rp, n=100, zone=fixed_zone if args.zone0 else None)
    print(f"[{args.tag}] FINAL step {step} time {time.time()-t0:.0f}s sr100 {sr:.2f}",
          flush=True)


if __name__ == "__main__":
    sys.exit(main())
