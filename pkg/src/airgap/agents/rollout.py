"""Single-episode control loop: latency-aware stepping, reward, energy, logs."""

from __future__ import annotations

import math

import numpy as np

from .. import dynamics, energy
from ..dynamics import (BATTERY_EXHAUSTED, COLLISION, GOAL_REACHED,
                        STEP_BUDGET_EXHAUSTED, ActionSpace, DynamicsParams,
                        LatencySample, VelocityCommand)
from ..envgen import EnvironmentInstance
from ..latency import LatencyModel, sample_latency
from ..qof import EpisodeRecord
from .reward import RewardParams, compute_reward

TRAJECTORY_HEADER = "t,x,y,yaw,vx,vy,action_id,power_w,energy_j,event"

_OUTCOME_BY_EVENT = {
    GOAL_REACHED: "success",
    COLLISION: "collision",
    STEP_BUDGET_EXHAUSTED: "step_exhausted",
    BATTERY_EXHAUSTED: "battery_exhausted",
}


class NavEpisode:
    """Drives one episode; callers pick actions, the episode does the rest.

    Physics terminals (collision, goal) come from the decision step; battery
    exhaustion and the decision-step budget are applied here. The hover
    command is the initial "previous action" for the first stale interval.
    """

    def __init__(self, instance: EnvironmentInstance, dyn: DynamicsParams,
                 space: ActionSpace, coeffs: energy.EnergyCoefficients,
                 reward_params: RewardParams,
                 latency_model: LatencyModel | None = None,
                 latency_rng: np.random.Generator | None = None,
                 collect_trajectory: bool = False):
        self.env = instance
        self.dyn = dyn
        self.space = space
        self.coeffs = coeffs
        self.reward_params = reward_params
        self.latency_model = (latency_model.with_t3(space.t3)
                              if latency_model is not None else None)
        self.latency_rng = latency_rng
        if self.latency_model is not None and latency_rng is None:
            raise ValueError("a latency model needs an rng for per-decision draws")

        self.state = dynamics.initial_state(instance)
        self.energy = energy.EnergyState(capacity=instance.config.battery_capacity)
        self.prev_command: VelocityCommand = VelocityCommand((0.0, 0.0), 0.0, space.t3)
        self.d_prev = dynamics.goal_distance(self.state, instance)
        self.obs = dynamics.observe(self.state, instance, dyn)
        self.done = False
        self.outcome: str | None = None
        self.total_reward = 0.0
        self.distance = 0.0
        self.sum_t2 = 0.0
        self.trajectory_rows: list[str] | None = [] if collect_trajectory else None

    def obs_vector(self) -> np.ndarray:
        return self.obs.as_vector()

    @property
    def steps(self) -> int:
        return self.state.decision_steps_taken

    def step(self, action):
        """Apply one decision; returns (next_obs_vector, reward, done, info)."""
        if self.done:
            raise RuntimeError("episode already finished")
        if isinstance(action, (int, np.integer)):
            action_id = int(action)
            command = dynamics.apply_discrete_action(action_id, self.state, self.space)
        else:
            action_id = -1
            command = dynamics.apply_continuous_action(action, self.state, self.space)

        if self.latency_model is not None:
            lat = sample_latency(self.latency_model, self.latency_rng)
        else:
            lat = LatencySample(0.0, 0.0, self.space.t3)
        self.sum_t2 += lat.t2

        outcome = dynamics.decision_step(self.state, self.env, self.prev_command,
                                         command, lat, self.dyn)

        battery_hit = False
        for s in outcome.motion_samples:
            power = energy.instantaneous_power(s.v_mid, s.a_xy, 0.0, 0.0, self.coeffs)
            self.energy = energy.accumulate(self.energy, power, s.dt, self.coeffs)
            self.distance += s.dist
            if self.trajectory_rows is not None:
                self.trajectory_rows.append(
                    f"{s.t:.6f},{s.x:.6f},{s.y:.6f},{s.yaw:.6f},{s.vx:.6f},"
                    f"{s.vy:.6f},{action_id},{power:.4f},"
                    f"{self.energy.energy_joules:.4f},")
            if self.energy.exhausted and not battery_hit:
                battery_hit = True

        primary = outcome.primary_event
        if primary is None and battery_hit:
            primary = BATTERY_EXHAUSTED
        if primary is None and outcome.new_state.decision_steps_taken >= \
                self.env.config.max_decision_steps:
            primary = STEP_BUDGET_EXHAUSTED

        self.state = outcome.new_state
        self.env = outcome.new_env
        self.prev_command = command
        self.obs = dynamics.observe(self.state, self.env, self.dyn)

        d_g = dynamics.goal_distance(self.state, self.env)
        v_now = min(math.hypot(self.state.velocity[0], self.state.velocity[1]),
                    self.reward_params.v_max)
        alpha = 1 if primary == GOAL_REACHED else 0
        beta = 1 if primary == COLLISION else 0
        reward = compute_reward(alpha, beta, d_g, self.d_prev, v_now,
                                self.reward_params)
        self.d_prev = d_g
        self.total_reward += reward

        if primary is not None:
            self.done = True
            self.outcome = _OUTCOME_BY_EVENT[primary]
            if self.trajectory_rows:
                # rows end with an empty event column; name the terminal cause
                self.trajectory_rows[-1] += primary

        info = {"events": set(outcome.events), "primary": primary,
                "latency": lat, "action_id": action_id}
        return self.obs.as_vector(), reward, self.done, info

    def record(self, trajectory_path: str | None = None) -> EpisodeRecord:
        if not self.done:
            raise RuntimeError("episode still running")
        return EpisodeRecord(
            outcome=self.outcome,
            flight_time=self.state.sim_time,
            distance=self.distance,
            energy_kj=self.energy.energy_joules / 1000.0,
            steps=self.state.decision_steps_taken,
            sum_t2_s=self.sum_t2,
            trajectory_path=trajectory_path,
        )

    def write_trajectory(self, path) -> None:
        if self.trajectory_rows is None:
            raise RuntimeError("trajectory collection was not enabled")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(TRAJECTORY_HEADER + "\n")
            fh.write("\n".join(self.trajectory_rows))
            fh.write("\n")
