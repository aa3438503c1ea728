"""Deterministic, seeded generation of randomized navigation arenas.

An arena is a rectangular volume with axis-aligned box obstacles (static or
moving), a start pose at the arena center, and a goal point. Worlds are flat
at a fixed flight altitude: obstacles span the full arena height and all
z components are carried as zeros so 3-vector interfaces stay intact.

Regenerating with the same (config, episode_index, zone) is bit-identical,
so parallel workers can rebuild any episode's world independently.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

REJECTION_BUDGET = 10_000

# Zone radii at the reference 50 m arena; scaled by arena_length / 50.
ZONE_BASE_RADII = (16.0, 32.0, 48.0)
ZONE_REFERENCE_LENGTH = 50.0

# Clearance margins beyond the configured min_distance (see module notes):
# obstacles never overlap a disc of this radius around the start pose, and
# random goals never land inside an obstacle box inflated by GOAL_CLEARANCE.
START_CLEARANCE = 1.0
GOAL_CLEARANCE = 0.5
WALL_MARGIN = 1.0  # random goals keep this distance from arena walls

# Config keys that are parsed for fidelity with upstream tooling but have no
# behavioral effect in a renderless world.
INERT_KEYS = ("asset", "materials", "textures")


class ConfigError(ValueError):
    """Raised by validate_config; carries every named violation found."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class PlacementInfeasibleError(RuntimeError):
    """Rejection-sampling budget exhausted; the config is over-dense."""


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from heterogeneous parts (platform independent)."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*parts) -> np.random.Generator:
    """Independent RNG stream keyed by (seed material, purpose tag)."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


@dataclass(frozen=True)
class EnvConfig:
    """Arena configuration. Counts may be a fixed int or an inclusive range."""

    arena_size: tuple[float, float, float] = (25.0, 25.0, 5.0)
    wall_colors: tuple[int, int, int] = (255, 255, 255)  # inert, kept verbatim
    num_static_obstacles: tuple[int, int] = (0, 0)
    num_dynamic_obstacles: tuple[int, int] = (0, 0)
    seed: int = 0
    min_distance: float = 2.0
    goal_position: tuple[float, float, float] | str = "random"
    dynamic_velocity_range: tuple[float, float] = (1.0, 2.5)
    obstacle_size_range: tuple[float, float] = (1.0, 3.0)
    goal_radius: float = 1.5
    max_decision_steps: int = 100
    battery_capacity: float = 0.0  # coulombs; 0 means unlimited

    @property
    def half_length(self) -> float:
        return self.arena_size[0] / 2.0

    @property
    def half_width(self) -> float:
        return self.arena_size[1] / 2.0

    @property
    def flight_altitude(self) -> float:
        return self.arena_size[2] / 2.0

    def to_dict(self) -> dict:
        return {
            "arena_size": list(self.arena_size),
            "wall_colors": list(self.wall_colors),
            "num_static_obstacles": list(self.num_static_obstacles),
            "num_dynamic_obstacles": list(self.num_dynamic_obstacles),
            "seed": self.seed,
            "minimum_distance": self.min_distance,
            "goal_position": (self.goal_position if isinstance(self.goal_position, str)
                              else list(self.goal_position)),
            "velocity": list(self.dynamic_velocity_range),
            "obstacle_size_range": list(self.obstacle_size_range),
            "goal_radius": self.goal_radius,
            "max_decision_steps": self.max_decision_steps,
            "battery_capacity": self.battery_capacity,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Obstacle:
    id: int
    kind: str  # "static" | "dynamic"
    center: tuple[float, float]
    half_extents: tuple[float, float]
    velocity: tuple[float, float]  # (0, 0) for static

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "center": list(self.center),
            "half_extents": list(self.half_extents),
            "velocity": list(self.velocity),
        }


@dataclass(frozen=True)
class CurriculumZone:
    """Concentric goal-sampling disc around the start pose.

    Zone k's sampling region is the full disc of radius[k], so it includes
    every inner zone.
    """

    zone_index: int
    radius: float

    @classmethod
    def for_arena(cls, zone_index: int, arena_length: float) -> "CurriculumZone":
        if not 0 <= zone_index < len(ZONE_BASE_RADII):
            raise ValueError(f"zone_index {zone_index} out of range")
        scale = arena_length / ZONE_REFERENCE_LENGTH
        return cls(zone_index, ZONE_BASE_RADII[zone_index] * scale)


@dataclass(frozen=True)
class EnvironmentInstance:
    config: EnvConfig
    episode_index: int
    obstacles: tuple[Obstacle, ...]
    goal: tuple[float, float, float]
    start_pose: tuple[float, float, float, float]  # x, y, z, yaw
    derived_rng_seed: int

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "episode_index": self.episode_index,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "goal": list(self.goal),
            "start_pose": list(self.start_pose),
            "derived_rng_seed": self.derived_rng_seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# --- config validation -------------------------------------------------------

_DEFAULTS = EnvConfig()


def _as_count_range(value, key: str, errors: list[str]) -> tuple[int, int]:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        lo = hi = int(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        try:
            lo, hi = int(value[0]), int(value[1])
        except (TypeError, ValueError):
            errors.append(f"{key} must be an int or [lo, hi] pair")
            return (0, 0)
    else:
        errors.append(f"{key} must be an int or [lo, hi] pair")
        return (0, 0)
    if lo < 0 or hi < 0:
        errors.append(f"{key} negative count")
    if lo > hi:
        errors.append(f"{key} range unordered")
    return (lo, hi)


def _as_floats(value, key: str, n: int, errors: list[str]):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        errors.append(f"{key} must be a {n}-element sequence")
        return None
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        errors.append(f"{key} must contain numbers")
        return None


def validate_config(raw: dict) -> EnvConfig:
    """Build a fully defaulted EnvConfig from a parsed JSON document.

    Every violation is reported; on any failure a ConfigError carrying the
    complete error list is raised. The inert keys (asset, materials,
    textures) are accepted with a notice and have no effect.
    """
    if not isinstance(raw, dict):
        raise ConfigError(["config document must be a JSON object"])
    errors: list[str] = []
    raw = dict(raw)

    for key in INERT_KEYS:
        if key in raw:
            log.info("config key %r accepted but has no effect in a renderless arena", key)
            raw.pop(key)

    known = {"arena_size", "wall_colors", "num_static_obstacles", "num_dynamic_obstacles",
             "seed", "minimum_distance", "goal_position", "velocity",
             "obstacle_size_range", "goal_radius", "max_decision_steps", "battery_capacity"}
    for key in sorted(set(raw) - known):
        errors.append(f"unknown key {key!r}")

    arena = _DEFAULTS.arena_size
    if "arena_size" in raw:
        got = _as_floats(raw["arena_size"], "arena_size", 3, errors)
        if got is not None:
            arena = got
            if any(d <= 0 for d in arena):
                errors.append("arena_size non-positive arena dims")

    colors = _DEFAULTS.wall_colors
    if "wall_colors" in raw:
        got = _as_floats(raw["wall_colors"], "wall_colors", 3, errors)
        if got is not None:
            colors = tuple(int(c) for c in got)
            if any(not 0 <= c <= 255 for c in colors):
                errors.append("wall_colors components must be 0-255")

    n_static = _DEFAULTS.num_static_obstacles
    if "num_static_obstacles" in raw:
        n_static = _as_count_range(raw["num_static_obstacles"], "num_static_obstacles", errors)
    n_dynamic = _DEFAULTS.num_dynamic_obstacles
    if "num_dynamic_obstacles" in raw:
        n_dynamic = _as_count_range(raw["num_dynamic_obstacles"], "num_dynamic_obstacles", errors)

    seed = _DEFAULTS.seed
    if "seed" in raw:
        try:
            seed = int(raw["seed"])
        except (TypeError, ValueError):
            errors.append("seed must be an integer")
        if seed < 0:
            errors.append("seed negative")

    min_distance = _DEFAULTS.min_distance
    if "minimum_distance" in raw:
        try:
            min_distance = float(raw["minimum_distance"])
        except (TypeError, ValueError):
            errors.append("minimum_distance must be a number")
        if min_distance < 0:
            errors.append("minimum_distance negative")

    goal = _DEFAULTS.goal_position
    if "goal_position" in raw:
        g = raw["goal_position"]
        if isinstance(g, str):
            if g != "random":
                errors.append('goal_position must be "random" or [x, y, z]')
            goal = "random"
        else:
            got = _as_floats(g, "goal_position", 3, errors)
            if got is not None:
                goal = got
                hl, hw, h = arena[0] / 2, arena[1] / 2, arena[2]
                if not (-hl < goal[0] < hl and -hw < goal[1] < hw and 0 < goal[2] < h):
                    errors.append("goal outside arena")

    vel = _DEFAULTS.dynamic_velocity_range
    if "velocity" in raw:
        got = _as_floats(raw["velocity"], "velocity", 2, errors)
        if got is not None:
            vel = got
            if vel[0] > vel[1]:
                errors.append("velocity range unordered")
            if vel[0] < 0:
                errors.append("velocity negative")

    size_range = _DEFAULTS.obstacle_size_range
    if "obstacle_size_range" in raw:
        got = _as_floats(raw["obstacle_size_range"], "obstacle_size_range", 2, errors)
        if got is not None:
            size_range = got
            if size_range[0] <= 0 or size_range[0] > size_range[1]:
                errors.append("obstacle_size_range must be positive and ordered")

    goal_radius = _DEFAULTS.goal_radius
    if "goal_radius" in raw:
        try:
            goal_radius = float(raw["goal_radius"])
        except (TypeError, ValueError):
            errors.append("goal_radius must be a number")
        if goal_radius <= 0:
            errors.append("goal_radius must be positive")

    max_steps = _DEFAULTS.max_decision_steps
    if "max_decision_steps" in raw:
        try:
            max_steps = int(raw["max_decision_steps"])
        except (TypeError, ValueError):
            errors.append("max_decision_steps must be an integer")
        if max_steps <= 0:
            errors.append("max_decision_steps must be positive")

    capacity = _DEFAULTS.battery_capacity
    if "battery_capacity" in raw:
        try:
            capacity = float(raw["battery_capacity"])
        except (TypeError, ValueError):
            errors.append("battery_capacity must be a number")
        if capacity < 0:
            errors.append("battery_capacity negative")

    if errors:
        raise ConfigError(errors)
    return EnvConfig(
        arena_size=arena, wall_colors=colors,
        num_static_obstacles=n_static, num_dynamic_obstacles=n_dynamic,
        seed=seed, min_distance=min_distance, goal_position=goal,
        dynamic_velocity_range=vel, obstacle_size_range=size_range,
        goal_radius=goal_radius, max_decision_steps=max_steps,
        battery_capacity=capacity,
    )


def load_config(path) -> EnvConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(json.load(fh))


# --- world generation --------------------------------------------------------

def _point_in_box(px, py, cx, cy, hx, hy, inflate=0.0) -> bool:
    return abs(px - cx) <= hx + inflate and abs(py - cy) <= hy + inflate


def _draw_count(rng: np.random.Generator, lo: int, hi: int) -> int:
    if lo == hi:
        return lo
    return int(rng.integers(lo, hi + 1))


def generate(config: EnvConfig, episode_index: int,
             zone: CurriculumZone | None = None) -> EnvironmentInstance:
    """Generate the world for one episode.

    Pure function of (config, episode_index, zone): repeat calls are
    bit-identical. Placement uses rejection sampling with a fixed budget;
    exhausting it raises PlacementInfeasibleError (over-dense config).
    """
    if episode_index < 0:
        raise ValueError("episode_index must be nonnegative")
    hl, hw = config.half_length, config.half_width
    alt = config.flight_altitude
    start = (0.0, 0.0, alt, 0.0)
    min_d = config.min_distance

    # Static count is redrawn every 4 episodes, dynamic count every episode.
    n_static = _draw_count(stream(config.seed, episode_index // 4, "static-count"),
                           *config.num_static_obstacles)
    n_dynamic = _draw_count(stream(config.seed, episode_index, "dynamic-count"),
                            *config.num_dynamic_obstacles)

    fixed_goal = None if isinstance(config.goal_position, str) else config.goal_position

    rng = stream(config.seed, episode_index, "obstacles")
    half_lo, half_hi = config.obstacle_size_range[0] / 2, config.obstacle_size_range[1] / 2
    obstacles: list[Obstacle] = []
    draws = 0
    for i in range(n_static + n_dynamic):
        kind = "static" if i < n_static else "dynamic"
        while True:
            draws += 1
            if draws > REJECTION_BUDGET:
                raise PlacementInfeasibleError(
                    f"obstacle placement budget exhausted after {REJECTION_BUDGET} draws")
            hx = float(rng.uniform(half_lo, half_hi))
            hy = float(rng.uniform(half_lo, half_hi))
            if hx >= hl or hy >= hw:
                continue  # obstacle would not fit in the arena
            cx = float(rng.uniform(-(hl - hx), hl - hx))
            cy = float(rng.uniform(-(hw - hy), hw - hy))
            if math.hypot(cx, cy) < min_d:
                continue
            if _point_in_box(0.0, 0.0, cx, cy, hx, hy, inflate=START_CLEARANCE):
                continue
            if fixed_goal is not None:
                if math.hypot(cx - fixed_goal[0], cy - fixed_goal[1]) < min_d:
                    continue
                if _point_in_box(fixed_goal[0], fixed_goal[1], cx, cy, hx, hy,
                                 inflate=GOAL_CLEARANCE):
                    continue
            if any(math.hypot(cx - o.center[0], cy - o.center[1]) < min_d
                   for o in obstacles):
                continue
            break
        if kind == "dynamic":
            speed = float(rng.uniform(*config.dynamic_velocity_range))
            heading = float(rng.uniform(0.0, 2.0 * math.pi))
            vel = (speed * math.cos(heading), speed * math.sin(heading))
        else:
            vel = (0.0, 0.0)
        obstacles.append(Obstacle(i, kind, (cx, cy), (hx, hy), vel))

    if fixed_goal is not None:
        if math.hypot(fixed_goal[0], fixed_goal[1]) < min_d:
            raise PlacementInfeasibleError("fixed goal closer than minimum distance to start")
        goal = tuple(float(g) for g in fixed_goal)
    else:
        zone_key = -1 if zone is None else zone.zone_index
        grng = stream(config.seed, episode_index, "goal", zone_key)
        goal = None
        for _ in range(REJECTION_BUDGET):
            if zone is not None:
                r = zone.radius * math.sqrt(float(grng.uniform()))
                theta = float(grng.uniform(0.0, 2.0 * math.pi))
                gx, gy = r * math.cos(theta), r * math.sin(theta)
            else:
                gx = float(grng.uniform(-(hl - WALL_MARGIN), hl - WALL_MARGIN))
                gy = float(grng.uniform(-(hw - WALL_MARGIN), hw - WALL_MARGIN))
            if abs(gx) > hl - WALL_MARGIN or abs(gy) > hw - WALL_MARGIN:
                continue
            if math.hypot(gx, gy) < max(min_d, config.goal_radius):
                continue
            if any(math.hypot(gx - o.center[0], gy - o.center[1]) < min_d
                   or _point_in_box(gx, gy, o.center[0], o.center[1],
                                    o.half_extents[0], o.half_extents[1],
                                    inflate=GOAL_CLEARANCE)
                   for o in obstacles):
                continue
            goal = (gx, gy, alt)
            break
        if goal is None:
            raise PlacementInfeasibleError("goal placement budget exhausted")

    return EnvironmentInstance(
        config=config,
        episode_index=episode_index,
        obstacles=tuple(obstacles),
        goal=goal,
        start_pose=start,
        derived_rng_seed=derive_seed(config.seed, episode_index,
                                     -1 if zone is None else zone.zone_index),
    )


def _bounce(c: float, v: float, lo: float, hi: float) -> tuple[float, float]:
    # Mirror-reflect the center into [lo, hi]; flips the velocity sign per
    # bounce so speed is preserved exactly.
    c = c + 0.0
    while c > hi or c < lo:
        if c > hi:
            c = 2.0 * hi - c
        else:
            c = 2.0 * lo - c
        v = -v
    return c, v


def advance_dynamic_obstacles(instance: EnvironmentInstance, dt: float) -> EnvironmentInstance:
    """Translate dynamic obstacles by velocity*dt, reflecting off arena walls.

    Obstacles pass through each other; only agent contact matters.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not any(o.kind == "dynamic" for o in instance.obstacles):
        return instance
    hl, hw = instance.config.half_length, instance.config.half_width
    moved = []
    for o in instance.obstacles:
        if o.kind != "dynamic":
            moved.append(o)
            continue
        hx, hy = o.half_extents
        cx, vx = _bounce(o.center[0] + o.velocity[0] * dt, o.velocity[0], -(hl - hx), hl - hx)
        cy, vy = _bounce(o.center[1] + o.velocity[1] * dt, o.velocity[1], -(hw - hy), hw - hy)
        moved.append(replace(o, center=(cx, cy), velocity=(vx, vy)))
    return replace(instance, obstacles=tuple(moved))
