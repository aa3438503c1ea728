"""Checkpoint evaluation over a fixed, shared set of seeded episodes.

Every evaluation of a given env config replays the same episode worlds
(derived from the config seed at a reserved episode-index base), so reports
for different checkpoints or latency settings are directly comparable.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..dynamics import ActionSpace, DynamicsParams
from ..energy import EnergyCoefficients
from ..envgen import EnvConfig, generate, stream, validate_config
from ..latency import LatencyModel, scale_action_space
from ..nn import AblationMask, load_checkpoint
from ..qof import EpisodeRecord, QofReport, aggregate
from .reward import RewardParams
from .rollout import NavEpisode

EVAL_EPISODE_BASE = 1_000_000


def checkpoint_id(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:12]


def action_space_for_checkpoint(meta: dict, dyn: DynamicsParams) -> ActionSpace:
    """Rebuild the action mapping the policy was trained with."""
    space = ActionSpace(t3=float(meta.get("t3", dyn.t3)))
    v_cap = meta.get("v_cap")
    if v_cap is not None:
        space = scale_action_space(space, float(v_cap))
    return space


def run_episode(net, instance, dyn: DynamicsParams, space: ActionSpace,
                coeffs: EnergyCoefficients, latency_model: LatencyModel | None,
                latency_rng, mask: AblationMask | None = None,
                trajectory_path: str | None = None) -> EpisodeRecord:
    """Greedy (no-exploration) rollout of one episode."""
    reward_params = RewardParams(v_max=space.v_max, t_max=space.t3)
    ep = NavEpisode(instance, dyn, space, coeffs, reward_params, latency_model,
                    latency_rng, collect_trajectory=trajectory_path is not None)
    while not ep.done:
        ep.step(net.greedy_action(ep.obs, mask))
    if trajectory_path is not None:
        ep.write_trajectory(trajectory_path)
    return ep.record(trajectory_path)


def _episode_indices(episodes: int, base: int) -> list[int]:
    return [base + i for i in range(episodes)]


def _eval_chunk(args) -> list[dict]:
    (ckpt_path, cfg_doc, indices, latency_doc, mask_names, dyn_doc,
     energy_doc, traj_dir, base) = args
    config = validate_config(cfg_doc)
    dyn = DynamicsParams.from_dict(dyn_doc)
    coeffs = EnergyCoefficients.from_dict(energy_doc)
    latency_model = LatencyModel.from_dict(latency_doc) if latency_doc else None
    mask = AblationMask.from_names(mask_names) if mask_names else None
    net, meta, _ = load_checkpoint(ckpt_path)
    space = action_space_for_checkpoint(meta, dyn)
    records = []
    for idx in indices:
        instance = generate(config, idx)
        rng = stream(config.seed, idx, "eval-latency")
        traj_path = (os.path.join(traj_dir, f"episode_{idx - base}.csv")
                     if traj_dir else None)
        records.append((idx, run_episode(net, instance, dyn, space, coeffs,
                                         latency_model, rng, mask, traj_path).to_dict()))
    return records


def evaluate(checkpoint_path: str, env_config: EnvConfig, episodes: int,
             latency_model: LatencyModel | None = None,
             ablation: AblationMask | None = None, *,
             dyn_params: DynamicsParams | None = None,
             energy_coeffs: EnergyCoefficients | None = None,
             traj_dir: str | None = None, workers: int = 1,
             episode_base: int = EVAL_EPISODE_BASE) -> tuple[QofReport, list[EpisodeRecord]]:
    """Evaluate a checkpoint over `episodes` fixed-seed episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    dyn = dyn_params or DynamicsParams()
    coeffs = energy_coeffs or EnergyCoefficients()
    if traj_dir:
        os.makedirs(traj_dir, exist_ok=True)
    indices = _episode_indices(episodes, episode_base)
    mask_names = []
    if ablation is not None:
        if ablation.zero_depth:
            mask_names.append("depth")
        if ablation.zero_velocity:
            mask_names.append("velocity")
        if ablation.zero_position:
            mask_names.append("position")
    latency_doc = latency_model.to_dict() if latency_model else None

    if workers <= 1:
        chunks = [indices]
    else:
        workers = min(workers, episodes)
        chunks = [indices[i::workers] for i in range(workers)]
    args = [(checkpoint_path, env_config.to_dict(), chunk, latency_doc,
             mask_names, dyn.to_dict(), coeffs.to_dict(), traj_dir, episode_base)
            for chunk in chunks]

    if workers <= 1:
        indexed = _eval_chunk(args[0])
    else:
        indexed = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_eval_chunk, args):
                indexed.extend(result)
    # merge in episode order so aggregation is identical for any worker count
    indexed.sort(key=lambda pair: pair[0])
    records = [EpisodeRecord.from_dict(d) for _, d in indexed]
    report = aggregate(records, env_hash=env_config.content_hash(),
                       checkpoint_id=checkpoint_id(checkpoint_path))
    return report, records
