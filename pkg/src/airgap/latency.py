"""Latency models, profiling, the safe-velocity cap, and action-space scaling.

A latency model holds separate distributions for t1 (state fetch) and t2
(policy inference) plus the fixed actuation duration t3. Profiling captures
empirical distributions either in-process or across the TCP inference
boundary; per-decision draws from the model drive latency injection during
training and evaluation.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ActionSpace, LatencySample, Observation, _spread
from .nn import PolicyNetwork

PROFILE_WARMUP = 10  # leading samples discarded before recording


class TransportError(RuntimeError):
    pass


# --- component distributions --------------------------------------------------

@dataclass(frozen=True)
class ConstantDist:
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("latency must be nonnegative")


@dataclass(frozen=True)
class GaussianDist:
    """Normal(mu, sigma) truncated at zero by resampling."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class EmpiricalDist:
    samples: tuple[float, ...]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empirical distribution needs at least one sample")
        if any((not math.isfinite(s)) or s < 0 for s in self.samples):
            raise ValueError("empirical samples must be finite and nonnegative")


def _draw(dist, rng: np.random.Generator) -> float:
    if isinstance(dist, ConstantDist):
        return dist.value
    if isinstance(dist, EmpiricalDist):
        return dist.samples[int(rng.integers(len(dist.samples)))]
    if isinstance(dist, GaussianDist):
        for _ in range(100):
            x = float(rng.normal(dist.mu, dist.sigma))
            if x >= 0:
                return x
        return max(0.0, float(rng.normal(dist.mu, dist.sigma)))
    raise TypeError(f"not a latency distribution: {dist!r}")


def _upper_bound(dist) -> float:
    """Conservative upper bound used for the safe-velocity cap."""
    if isinstance(dist, ConstantDist):
        return dist.value
    if isinstance(dist, EmpiricalDist):
        return max(dist.samples)
    if isinstance(dist, GaussianDist):
        return dist.mu + 3.0 * dist.sigma
    raise TypeError(f"not a latency distribution: {dist!r}")


def _dist_to_dict(dist) -> dict:
    if isinstance(dist, ConstantDist):
        return {"kind": "constant", "value": dist.value}
    if isinstance(dist, EmpiricalDist):
        return {"kind": "empirical", "samples": list(dist.samples)}
    if isinstance(dist, GaussianDist):
        return {"kind": "gaussian", "mu": dist.mu, "sigma": dist.sigma}
    raise TypeError(f"not a latency distribution: {dist!r}")


def _dist_from_dict(raw: dict):
    kind = raw["kind"]
    if kind == "constant":
        return ConstantDist(float(raw["value"]))
    if kind == "empirical":
        return EmpiricalDist(tuple(float(s) for s in raw["samples"]))
    if kind == "gaussian":
        return GaussianDist(float(raw["mu"]), float(raw["sigma"]))
    raise ValueError(f"unknown latency distribution kind {kind!r}")


@dataclass(frozen=True)
class LatencyModel:
    t1: object = ConstantDist(0.0)
    t2: object = ConstantDist(0.0)
    t3: float = 0.5

    @classmethod
    def constant(cls, t2_s: float, t1_s: float = 0.0, t3: float = 0.5) -> "LatencyModel":
        return cls(ConstantDist(t1_s), ConstantDist(t2_s), t3)

    @classmethod
    def zero(cls, t3: float = 0.5) -> "LatencyModel":
        return cls.constant(0.0, 0.0, t3)

    def response_latency(self) -> float:
        """Worst observed decision latency: max(t1) + max(t2) + t3."""
        return _upper_bound(self.t1) + _upper_bound(self.t2) + self.t3

    def with_t3(self, t3: float) -> "LatencyModel":
        return replace(self, t3=t3)

    def to_dict(self) -> dict:
        return {"t1": _dist_to_dict(self.t1), "t2": _dist_to_dict(self.t2),
                "t3": self.t3}

    @classmethod
    def from_dict(cls, raw: dict) -> "LatencyModel":
        return cls(_dist_from_dict(raw["t1"]), _dist_from_dict(raw["t2"]),
                   float(raw.get("t3", 0.5)))


def sample_latency(model: LatencyModel, rng: np.random.Generator) -> LatencySample:
    """Draw one per-decision latency triple from the model."""
    return LatencySample(t1=_draw(model.t1, rng), t2=_draw(model.t2, rng), t3=model.t3)


# --- trace files ---------------------------------------------------------------

def save_trace(model: LatencyModel, path) -> None:
    """Write a latency trace so a profile captured on one host trains on another."""
    def listed(dist):
        if isinstance(dist, EmpiricalDist):
            return list(dist.samples)
        if isinstance(dist, ConstantDist):
            return [dist.value]
        raise ValueError("only empirical/constant models can be saved as traces")

    doc = {"kind": "empirical", "unit": "seconds",
           "t1_samples": listed(model.t1), "t2_samples": listed(model.t2),
           "t3": model.t3}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_trace(path) -> LatencyModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("unit", "seconds") != "seconds":
        raise ValueError(f"unsupported trace unit {doc.get('unit')!r}")
    kind = doc.get("kind", "empirical")
    t3 = float(doc.get("t3", 0.5))
    if kind == "empirical":
        t1s = [float(v) for v in doc.get("t1_samples", [])]
        t2s = [float(v) for v in doc.get("t2_samples", [])]
        t1 = EmpiricalDist(tuple(t1s)) if len(t1s) > 1 else ConstantDist(t1s[0] if t1s else 0.0)
        t2 = EmpiricalDist(tuple(t2s)) if len(t2s) > 1 else ConstantDist(t2s[0] if t2s else 0.0)
        return LatencyModel(t1, t2, t3)
    if kind == "constant":
        return LatencyModel.constant(float(doc.get("t2", 0.0)),
                                     float(doc.get("t1", 0.0)), t3)
    raise ValueError(f"unknown trace kind {kind!r}")


def parse_latency_spec(spec: str, t3: float = 0.5) -> LatencyModel:
    """Parse CLI latency flags.

    Forms: 'constant:<ms>', 'trace:<file>', 'gaussian:<mu_ms>,<sigma_ms>'.
    """
    if ":" not in spec:
        raise ValueError(f"latency spec must be kind:args, got {spec!r}")
    kind, arg = spec.split(":", 1)
    if kind == "constant":
        return LatencyModel.constant(float(arg) / 1000.0, t3=t3)
    if kind == "trace":
        return load_trace(arg).with_t3(t3)
    if kind == "gaussian":
        mu_ms, sigma_ms = arg.split(",")
        return LatencyModel(ConstantDist(0.0),
                            GaussianDist(float(mu_ms) / 1000.0, float(sigma_ms) / 1000.0),
                            t3)
    raise ValueError(f"unknown latency kind {kind!r}")


# --- safe velocity and action scaling ------------------------------------------

@dataclass(frozen=True)
class SafetyParams:
    """Braking model inputs for the velocity cap."""

    a_brake: float = 5.0   # max deceleration, m/s^2
    d_sense: float = 20.0  # sensing distance (depth max_range), m

    def __post_init__(self):
        if self.a_brake <= 0 or self.d_sense <= 0:
            raise ValueError("a_brake and d_sense must be positive")

    @classmethod
    def from_dict(cls, raw: dict | None) -> "SafetyParams":
        raw = raw or {}
        unknown = set(raw) - {"a_brake", "d_sense"}
        if unknown:
            raise ValueError(f"unknown safety keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in raw.items()})


def max_safe_velocity(response_latency: float, safety: SafetyParams | None = None) -> float:
    """Largest speed that can react and brake within the sensing distance.

    Solves v*latency + v^2 / (2*a_brake) = d_sense for v (stopping-distance
    model; travel at v during the decision latency, then brake at a_brake).
    """
    if response_latency < 0:
        raise ValueError("latency must be nonnegative")
    s = safety or SafetyParams()
    v = s.a_brake * (-response_latency
                     + math.sqrt(response_latency ** 2 + 2.0 * s.d_sense / s.a_brake))
    return max(v, 0.0)


def scale_action_space(space: ActionSpace, v_cap: float) -> ActionSpace:
    """Rescale translation speeds so no command exceeds the velocity cap.

    Forward/backward tables become evenly spaced over [min(1, cap), cap] and
    the continuous magnitude range becomes [min(1, cap), cap]; yaw rates are
    untouched. Caps above the current maximum leave the space unchanged
    (the cap only ever shrinks the action space).
    """
    if v_cap <= 0:
        raise ValueError("v_cap must be positive")
    cap = min(v_cap, space.v_max)
    lo = min(1.0, cap)
    return replace(space,
                   forward_speeds=_spread(lo, cap, len(space.forward_speeds)),
                   backward_speeds=_spread(lo, cap, len(space.backward_speeds)),
                   v_min=lo, v_max=cap)


# --- profiling ------------------------------------------------------------------

def random_observation(n_rays: int, rng: np.random.Generator) -> Observation:
    """A synthetic but internally consistent observation for profiling."""
    depth = rng.uniform(0.0, 1.0, size=n_rays)
    vel = (float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)), 0.0)
    gx, gy = float(rng.uniform(-20, 20)), float(rng.uniform(-20, 20))
    return Observation(depth=depth, velocity=vel,
                       position=(gx, gy, math.hypot(gx, gy)))


def profile_inference(net: PolicyNetwork, n_samples: int,
                      transport: str = "in_process", endpoint: str | None = None,
                      t3: float = 0.5, rng: np.random.Generator | None = None,
                      warmup: int = PROFILE_WARMUP) -> LatencyModel:
    """Measure the per-decision latency distribution for a policy.

    In-process: t2 is the wall time of a single forward pass on a monotonic
    clock and t1 is zero. Remote: each sample pings the endpoint with an
    observation-sized payload for t1 and takes t2 from the server's reported
    compute time. The first `warmup` measurements are discarded.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng or np.random.default_rng(0)
    n_rays = net.template.n_rays
    observations = [random_observation(n_rays, rng) for _ in range(warmup + n_samples)]

    if transport == "in_process":
        t2s = []
        for obs in observations:
            start = time.perf_counter()
            net.greedy_action(obs)
            t2s.append(time.perf_counter() - start)
        return LatencyModel(ConstantDist(0.0), EmpiricalDist(tuple(t2s[warmup:])), t3)

    if transport == "remote_endpoint":
        from . import hilnet  # local import: hilnet pulls in socket machinery
        if endpoint is None:
            raise TransportError("remote profiling requires an endpoint")
        host, port = endpoint.rsplit(":", 1)
        obs_payload_size = 2 + 4 * (n_rays + 6)  # count prefix + float32 values
        t1s, t2s = [], []
        with hilnet.PolicyClient(host, int(port)) as client:
            for obs in observations:
                t1s.append(client.ping(obs_payload_size))
                _, _, t2 = client.infer(obs.as_vector())
                t2s.append(t2)
        return LatencyModel(EmpiricalDist(tuple(t1s[warmup:])),
                            EmpiricalDist(tuple(t2s[warmup:])), t3)

    raise ValueError(f"unknown transport {transport!r}")


@dataclass(frozen=True)
class SweepRow:
    num_layers: int
    num_filters: int
    mean_t2_s: float
    p95_t2_s: float
    parameter_count: int


def latency_sweep(grid, transport: str = "in_process", endpoint: str | None = None,
                  n_samples: int = 1000, n_rays: int = 32,
                  output_spec: str = "discrete") -> list[SweepRow]:
    """Profile one row per (num_layers, num_filters) template in the grid."""
    from .nn import PolicyTemplate, build_policy
    grid = list(grid)
    if not grid:
        raise ValueError("template grid must be non-empty")
    rows = []
    for layers, filters in grid:
        net = build_policy(PolicyTemplate(layers, filters, n_rays), output_spec,
                           init_seed=0)
        model = profile_inference(net, n_samples, transport, endpoint)
        t2s = np.array(model.t2.samples)
        rows.append(SweepRow(layers, filters, float(t2s.mean()),
                             float(np.percentile(t2s, 95)), net.parameter_count))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("num_layers,num_filters,mean_t2_ms,p95_t2_ms,parameter_count\n")
        for r in rows:
            fh.write(f"{r.num_layers},{r.num_filters},{r.mean_t2_s * 1e3:.6f},"
                     f"{r.p95_t2_s * 1e3:.6f},{r.parameter_count}\n")
