"""UAV kinematics, action semantics, depth sensing, and the decision timeline.

The vehicle is a disc flying at fixed altitude. Velocity slews toward the
commanded target under a bounded acceleration so acceleration-dependent power
terms are meaningful. A decision step first continues the *previous* command
for the stale interval (state-fetch latency t1 plus inference latency t2) and
only then applies the new command for the actuation duration t3; that stale
interval is what separates a fast host from a slow one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .envgen import EnvironmentInstance, advance_dynamic_obstacles

COLLISION = "collision"
GOAL_REACHED = "goal_reached"
STEP_BUDGET_EXHAUSTED = "step_budget_exhausted"
BATTERY_EXHAUSTED = "battery_exhausted"

TERMINAL_EVENTS = (COLLISION, GOAL_REACHED, STEP_BUDGET_EXHAUSTED, BATTERY_EXHAUSTED)

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DynamicsParams:
    dt_phys: float = 0.02        # physics substep, s
    a_max: float = 5.0           # velocity slew limit, m/s^2
    r_agent: float = 0.3         # collision disc radius, m
    n_rays: int = 32
    fov_deg: float = 90.0
    max_range: float = 20.0      # depth saturation distance, m
    t3: float = 0.5              # actuation duration per decision, s

    @classmethod
    def from_dict(cls, raw: dict | None) -> "DynamicsParams":
        raw = raw or {}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown dynamics keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "dt_phys": self.dt_phys, "a_max": self.a_max, "r_agent": self.r_agent,
            "n_rays": self.n_rays, "fov_deg": self.fov_deg,
            "max_range": self.max_range, "t3": self.t3,
        }


@dataclass(frozen=True)
class WorldState:
    position: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float, float]
    sim_time: float = 0.0
    decision_steps_taken: int = 0


@dataclass(frozen=True)
class VelocityCommand:
    target_velocity: tuple[float, float]  # world frame, m/s
    yaw_rate: float                       # rad/s
    duration: float                       # s


HOVER = VelocityCommand((0.0, 0.0), 0.0, 0.5)


@dataclass(frozen=True)
class Observation:
    """Policy input triplet: depth scan, velocity vector, goal vector."""

    depth: np.ndarray                       # n_rays values in [0, 1]
    velocity: tuple[float, float, float]    # v_x, v_y, v_z
    position: tuple[float, float, float]    # x_goal, y_goal, d_goal

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.depth,
                               np.asarray(self.velocity, dtype=np.float64),
                               np.asarray(self.position, dtype=np.float64)])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_rays: int) -> "Observation":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (n_rays + 6,):
            raise ValueError(f"expected {n_rays + 6} values, got {vec.shape}")
        return cls(vec[:n_rays].copy(), tuple(vec[n_rays:n_rays + 3]),
                   tuple(vec[n_rays + 3:]))


@dataclass(frozen=True)
class MotionSample:
    """One physics substep, for energy integration and trajectory logs."""

    dt: float
    t: float                       # sim time at substep end
    x: float
    y: float
    yaw: float
    vx: float                      # velocity at substep end
    vy: float
    v_mid: tuple[float, float]     # trapezoid-consistent mid velocity
    a_xy: tuple[float, float]
    dist: float                    # path length advanced this substep


@dataclass(frozen=True)
class StepOutcome:
    new_state: WorldState
    new_env: EnvironmentInstance
    events: frozenset
    primary_event: str | None
    motion_samples: tuple[MotionSample, ...]


# --- action spaces -----------------------------------------------------------

def _spread(lo: float, hi: float, n: int) -> tuple[float, ...]:
    if n == 1:
        return (hi,)
    step = (hi - lo) / (n - 1)
    return tuple(lo + step * i for i in range(n))


@dataclass(frozen=True)
class ActionSpace:
    """Discrete command table (25 ids) plus the continuous magnitude range.

    Ids 0-9 fly forward along the current heading at 10 evenly spaced speeds,
    10-14 fly backward at 5 speeds, 15-19 yaw at positive rates, 20-24 yaw at
    negative rates (yaw ids command zero translation). Continuous actions map
    [-1, 1]^2 direction/magnitude onto [v_min, v_max] m/s with auto-yaw.
    """

    forward_speeds: tuple[float, ...] = _spread(1.0, 5.0, 10)
    backward_speeds: tuple[float, ...] = _spread(1.0, 5.0, 5)
    yaw_right_dps: tuple[float, ...] = (108.0, 54.0, 27.0, 13.5, 6.75)
    yaw_left_dps: tuple[float, ...] = (-216.0, -108.0, -54.0, -27.0, -13.5)
    t3: float = 0.5
    v_min: float = 1.0
    v_max: float = 5.0

    @property
    def n_actions(self) -> int:
        return (len(self.forward_speeds) + len(self.backward_speeds)
                + len(self.yaw_right_dps) + len(self.yaw_left_dps))

    @property
    def max_speed(self) -> float:
        return max(max(self.forward_speeds), max(self.backward_speeds), self.v_max)


def apply_discrete_action(action_id: int, state: WorldState,
                          space: ActionSpace | None = None) -> VelocityCommand:
    """Map a discrete action id to a velocity/yaw-rate command."""
    space = space or ActionSpace()
    n_f, n_b = len(space.forward_speeds), len(space.backward_speeds)
    n_r = len(space.yaw_right_dps)
    if not 0 <= action_id < space.n_actions:
        raise ValueError(f"action id {action_id} out of range 0..{space.n_actions - 1}")
    heading = (math.cos(state.yaw), math.sin(state.yaw))
    if action_id < n_f:
        s = space.forward_speeds[action_id]
        return VelocityCommand((s * heading[0], s * heading[1]), 0.0, space.t3)
    if action_id < n_f + n_b:
        s = space.backward_speeds[action_id - n_f]
        return VelocityCommand((-s * heading[0], -s * heading[1]), 0.0, space.t3)
    if action_id < n_f + n_b + n_r:
        rate = space.yaw_right_dps[action_id - n_f - n_b]
    else:
        rate = space.yaw_left_dps[action_id - n_f - n_b - n_r]
    return VelocityCommand((0.0, 0.0), math.radians(rate), space.t3)


def apply_continuous_action(a, state: WorldState,
                            space: ActionSpace | None = None) -> VelocityCommand:
    """Map a continuous action in [-1, 1]^2 to a velocity command.

    Magnitude scales linearly from v_min (at |a| = 0) to v_max (at |a| >= 1);
    the zero vector flies at v_min along the current heading. Yaw rate is set
    so the heading reaches atan2(vy, vx) over the actuation duration.
    """
    space = space or ActionSpace()
    a1, a2 = float(a[0]), float(a[1])
    if not (-1.0 <= a1 <= 1.0 and -1.0 <= a2 <= 1.0):
        raise ValueError("continuous action components must lie in [-1, 1]")
    norm = math.hypot(a1, a2)
    mag = space.v_min + (space.v_max - space.v_min) * min(norm, 1.0)
    if norm < 1e-12:
        direction = (math.cos(state.yaw), math.sin(state.yaw))
    else:
        direction = (a1 / norm, a2 / norm)
    vx, vy = mag * direction[0], mag * direction[1]
    target_yaw = math.atan2(vy, vx)
    dyaw = _wrap_angle(target_yaw - state.yaw)
    return VelocityCommand((vx, vy), dyaw / space.t3, space.t3)


def _wrap_angle(a: float) -> float:
    a = math.fmod(a + math.pi, _TWO_PI)
    if a < 0:
        a += _TWO_PI
    return a - math.pi


# --- collision and sensing ---------------------------------------------------

def _collides(x: float, y: float, r: float, env: EnvironmentInstance) -> bool:
    cfg = env.config
    if abs(x) >= cfg.half_length - r or abs(y) >= cfg.half_width - r:
        return True
    for o in env.obstacles:
        dx = abs(x - o.center[0]) - o.half_extents[0]
        dy = abs(y - o.center[1]) - o.half_extents[1]
        if dx < 0 and dy < 0:
            return True
        dx = max(dx, 0.0)
        dy = max(dy, 0.0)
        if dx * dx + dy * dy <= r * r:
            return True
    return False


def sense_depth(state: WorldState, env: EnvironmentInstance,
                params: DynamicsParams | None = None) -> np.ndarray:
    """Ray-cast depth scan: n_rays over the FOV centered on the heading.

    Each value is min(first hit over obstacle boxes and walls, max_range)
    divided by max_range, so 1.0 means no hit within range.
    """
    params = params or DynamicsParams()
    half_fov = math.radians(params.fov_deg) / 2.0
    angles = state.yaw + np.linspace(-half_fov, half_fov, params.n_rays)
    dx = np.cos(angles)
    dy = np.sin(angles)
    ox, oy = state.position[0], state.position[1]
    hl, hw = env.config.half_length, env.config.half_width

    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (hl - ox) / dx, np.where(dx < 0, (-hl - ox) / dx, np.inf))
        ty = np.where(dy > 0, (hw - oy) / dy, np.where(dy < 0, (-hw - oy) / dy, np.inf))
    dist = np.minimum(tx, ty)  # wall exit distance (agent is inside the arena)

    if env.obstacles:
        cx = np.array([o.center[0] for o in env.obstacles])
        cy = np.array([o.center[1] for o in env.obstacles])
        hx = np.array([o.half_extents[0] for o in env.obstacles])
        hy = np.array([o.half_extents[1] for o in env.obstacles])
        with np.errstate(divide="ignore", invalid="ignore"):
            t1x = (cx - hx - ox) / dx[:, None]
            t2x = (cx + hx - ox) / dx[:, None]
            t1y = (cy - hy - oy) / dy[:, None]
            t2y = (cy + hy - oy) / dy[:, None]
        # A zero direction component against a slab edge yields nan; treat the
        # axis as unconstrained when the origin lies inside the slab.
        lo_x = np.fmin(t1x, t2x)
        hi_x = np.fmax(t1x, t2x)
        lo_y = np.fmin(t1y, t2y)
        hi_y = np.fmax(t1y, t2y)
        inside_x = np.abs(ox - cx) <= hx
        inside_y = np.abs(oy - cy) <= hy
        lo_x = np.where(np.isnan(lo_x), np.where(inside_x, -np.inf, np.inf), lo_x)
        hi_x = np.where(np.isnan(hi_x), np.where(inside_x, np.inf, -np.inf), hi_x)
        lo_y = np.where(np.isnan(lo_y), np.where(inside_y, -np.inf, np.inf), lo_y)
        hi_y = np.where(np.isnan(hi_y), np.where(inside_y, np.inf, -np.inf), hi_y)
        tmin = np.maximum(lo_x, lo_y)
        tmax = np.minimum(hi_x, hi_y)
        hit = (tmax >= tmin) & (tmax >= 0.0)
        box_t = np.where(hit, np.maximum(tmin, 0.0), np.inf)
        dist = np.minimum(dist, box_t.min(axis=1))

    return np.minimum(dist, params.max_range) / params.max_range


def observe(state: WorldState, env: EnvironmentInstance,
            params: DynamicsParams | None = None) -> Observation:
    """Assemble the policy input triplet for the current state."""
    x_goal = env.goal[0] - state.position[0]
    y_goal = env.goal[1] - state.position[1]
    d_goal = math.hypot(x_goal, y_goal)
    return Observation(depth=sense_depth(state, env, params),
                       velocity=state.velocity,
                       position=(x_goal, y_goal, d_goal))


def goal_distance(state: WorldState, env: EnvironmentInstance) -> float:
    return math.hypot(env.goal[0] - state.position[0], env.goal[1] - state.position[1])


def initial_state(env: EnvironmentInstance) -> WorldState:
    x, y, z, yaw = env.start_pose
    return WorldState(position=(x, y, z), yaw=yaw, velocity=(0.0, 0.0, 0.0))


# --- physics stepping --------------------------------------------------------

def _substep_lengths(duration: float, dt: float):
    n = int(duration / dt + 1e-9)
    rem = duration - n * dt
    for _ in range(n):
        yield dt
    if rem > 1e-12:
        yield rem


def step_physics(state: WorldState, env: EnvironmentInstance,
                 command: VelocityCommand, duration: float,
                 params: DynamicsParams | None = None) -> StepOutcome:
    """Advance the world under one command for the given duration.

    Velocity slews toward the target with |a| <= a_max; position integrates
    trapezoidally so constant-acceleration segments are exact. Stops early at
    the substep where a collision or goal capture occurs.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    params = params or DynamicsParams()
    x, y, z = state.position
    vx, vy = state.velocity[0], state.velocity[1]
    yaw = state.yaw
    t = state.sim_time
    gx, gy = env.goal[0], env.goal[1]
    goal_r2 = env.config.goal_radius ** 2
    txv, tyv = command.target_velocity
    has_dynamic = any(o.kind == "dynamic" for o in env.obstacles)

    samples: list[MotionSample] = []
    events: list[str] = []
    for dt in _substep_lengths(duration, params.dt_phys):
        yaw = _wrap_angle(yaw + command.yaw_rate * dt)
        dvx, dvy = txv - vx, tyv - vy
        dv = math.hypot(dvx, dvy)
        limit = params.a_max * dt
        if dv > limit:
            s = limit / dv
            dvx *= s
            dvy *= s
        nvx, nvy = vx + dvx, vy + dvy
        mvx, mvy = (vx + nvx) / 2.0, (vy + nvy) / 2.0
        nx, ny = x + mvx * dt, y + mvy * dt
        t += dt
        if has_dynamic:
            env = advance_dynamic_obstacles(env, dt)
        samples.append(MotionSample(
            dt=dt, t=t, x=nx, y=ny, yaw=yaw, vx=nvx, vy=nvy,
            v_mid=(mvx, mvy), a_xy=(dvx / dt, dvy / dt),
            dist=math.hypot(nx - x, ny - y)))
        x, y, vx, vy = nx, ny, nvx, nvy
        if _collides(x, y, params.r_agent, env):
            events.append(COLLISION)
            break
        if (x - gx) ** 2 + (y - gy) ** 2 <= goal_r2:
            events.append(GOAL_REACHED)
            break

    new_state = WorldState(position=(x, y, z), yaw=yaw, velocity=(vx, vy, 0.0),
                           sim_time=t, decision_steps_taken=state.decision_steps_taken)
    return StepOutcome(new_state=new_state, new_env=env,
                       events=frozenset(events),
                       primary_event=events[0] if events else None,
                       motion_samples=tuple(samples))


@dataclass(frozen=True)
class LatencySample:
    """Per-decision latency draw: state fetch t1, inference t2, actuation t3."""

    t1: float
    t2: float
    t3: float

    def __post_init__(self):
        if self.t1 < 0 or self.t2 < 0 or self.t3 < 0:
            raise ValueError("latency components must be nonnegative")

    @property
    def stale_interval(self) -> float:
        return self.t1 + self.t2


def decision_step(state: WorldState, env: EnvironmentInstance,
                  previous_command: VelocityCommand, new_command: VelocityCommand,
                  latency: LatencySample,
                  params: DynamicsParams | None = None) -> StepOutcome:
    """One control decision under latency.

    The previous (stale) command keeps flying for t1 + t2 seconds while the
    new action is being fetched and computed; the new command then applies
    for its duration. With t1 = t2 = 0 this equals step_physics exactly.
    """
    params = params or DynamicsParams()
    stale = latency.stale_interval
    if stale > 0:
        first = step_physics(state, env, previous_command, stale, params)
        if first.primary_event is not None:
            final = replace(first.new_state,
                            decision_steps_taken=state.decision_steps_taken + 1)
            return replace(first, new_state=final)
        second = step_physics(first.new_state, first.new_env, new_command,
                              new_command.duration, params)
        final = replace(second.new_state,
                        decision_steps_taken=state.decision_steps_taken + 1)
        return StepOutcome(
            new_state=final, new_env=second.new_env,
            events=first.events | second.events,
            primary_event=second.primary_event,
            motion_samples=first.motion_samples + second.motion_samples)
    outcome = step_physics(state, env, new_command, new_command.duration, params)
    final = replace(outcome.new_state,
                    decision_steps_taken=state.decision_steps_taken + 1)
    return replace(outcome, new_state=final)
