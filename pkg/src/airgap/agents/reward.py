"""Shared reward for discrete and continuous agents.

    r = 1000*alpha - 1000*beta - D_g + D_c*gamma
    D_c = (V_max - V_now) * t_max

alpha flags goal capture, beta flags collision, D_g is the current distance
to goal, and gamma is 1 exactly when the agent got strictly closer since the
previous decision.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RewardParams:
    goal_bonus: float = 1000.0
    collision_penalty: float = 1000.0
    v_max: float = 5.0   # m/s, top commandable speed
    t_max: float = 0.5   # s, actuation duration

    def __post_init__(self):
        if self.v_max <= 0 or self.t_max <= 0:
            raise ValueError("v_max and t_max must be positive")


def compute_reward(alpha: int, beta: int, d_g: float, d_g_prev: float,
                   v_now: float, params: RewardParams) -> float:
    gamma = 1.0 if d_g < d_g_prev else 0.0
    d_c = (params.v_max - v_now) * params.t_max
    return params.goal_bonus * alpha - params.collision_penalty * beta - d_g + d_c * gamma
