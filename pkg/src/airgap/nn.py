"""From-scratch policy networks with explicit forward and backward passes.

The architecture is a two-knob template: L kernel-3 stride-1 same-padding
1-D convolutions with F filters over the depth scan, flattened and
concatenated with the velocity and goal vectors, then L fully connected
layers with F units, then the action head (25 Q-values for discrete control,
or a Tanh mean pair plus a value head and a state-independent log-std vector
for continuous control). ReLU everywhere else. float64 throughout so
gradients can be checked against finite differences at tight tolerance.

Layout conventions: conv activations are (batch, position, channel); the
flatten is position-major. backward() consumes the cache of the most recent
forward() call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

KERNEL = 3

CKPT_MAGIC = b"ALCK"
CKPT_VERSION = 1

OUTPUT_DISCRETE = "discrete"
OUTPUT_CONTINUOUS = "continuous"


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyTemplate:
    """(num_layers, num_filters) policy sizing knob; kernel 3, stride 1."""

    num_layers: int
    num_filters: int
    n_rays: int = 32

    def __post_init__(self):
        if self.num_layers < 1 or self.num_filters < 1:
            raise ValueError("num_layers and num_filters must be >= 1")
        if self.n_rays < KERNEL:
            raise ValueError(
                f"n_rays={self.n_rays} too small for kernel-{KERNEL} convolutions")

    @classmethod
    def parse(cls, text: str, n_rays: int = 32) -> "PolicyTemplate":
        """Parse 'LxF' (e.g. '5x32')."""
        try:
            l_str, f_str = text.lower().split("x")
            return cls(int(l_str), int(f_str), n_rays)
        except (ValueError, AttributeError) as exc:
            raise ValueError(f"template must look like '5x32', got {text!r}") from exc

    def to_dict(self) -> dict:
        return {"num_layers": self.num_layers, "num_filters": self.num_filters,
                "n_rays": self.n_rays}


@dataclass(frozen=True)
class AblationMask:
    """Inference-time input zeroing; network weights are untouched."""

    zero_depth: bool = False
    zero_velocity: bool = False
    zero_position: bool = False

    @classmethod
    def from_names(cls, names) -> "AblationMask":
        names = set(names or ())
        unknown = names - {"depth", "velocity", "position"}
        if unknown:
            raise ValueError(f"unknown ablation targets: {sorted(unknown)}")
        return cls("depth" in names, "velocity" in names, "position" in names)

    @property
    def any(self) -> bool:
        return self.zero_depth or self.zero_velocity or self.zero_position


def _act_forward(z: np.ndarray, kind: str | None) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_backward(dy: np.ndarray, z: np.ndarray, y: np.ndarray, kind: str | None) -> np.ndarray:
    if kind == "relu":
        return dy * (z > 0.0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    return dy


class Conv1d:
    """Same-padding kernel-3 convolution realized as an im2col matmul."""

    def __init__(self, c_in: int, c_out: int, activation: str | None,
                 rng: np.random.Generator):
        bound = 1.0 / math.sqrt(c_in * KERNEL)
        self.w = rng.uniform(-bound, bound, size=(KERNEL * c_in, c_out))
        self.b = rng.uniform(-bound, bound, size=(c_out,))
        self.c_in = c_in
        self.c_out = c_out
        self.activation = activation
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        # x: (B, N, C_in) -> (B, N, C_out); im2col rows are kernel-major
        # blocks of channels so w[k*C + c, f] multiplies xp[:, n+k, c].
        batch, n, c = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} channels, got {c}")
        xp = np.zeros((batch, n + KERNEL - 1, c), dtype=x.dtype)
        xp[:, 1:n + 1, :] = x
        cols = np.empty((batch * n, KERNEL * c), dtype=x.dtype)
        cols3 = cols.reshape(batch, n, KERNEL * c)
        for k in range(KERNEL):
            cols3[:, :, k * c:(k + 1) * c] = xp[:, k:k + n, :]
        z = (cols @ self.w).reshape(batch, n, self.c_out)
        z += self.b
        y = _act_forward(z, self.activation)
        self._cache = (cols, z, y, (batch, n, c))
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("missing forward cache")
        cols, z, y, (batch, n, c) = self._cache
        dz = _act_backward(dy, z, y, self.activation)
        flat_dz = dz.reshape(batch * n, self.c_out)
        self.dw = cols.T @ flat_dz
        self.db = flat_dz.sum(axis=0)
        dcols = (flat_dz @ self.w.T).reshape(batch, n, KERNEL * c)
        dxp = np.zeros((batch, n + KERNEL - 1, c), dtype=dy.dtype)
        for k in range(KERNEL):
            dxp[:, k:k + n, :] += dcols[:, :, k * c:(k + 1) * c]
        return dxp[:, 1:n + 1, :]

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [("w", self.dw), ("b", self.db)]


class Dense:
    def __init__(self, d_in: int, d_out: int, activation: str | None,
                 rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_in)
        self.w = rng.uniform(-bound, bound, size=(d_in, d_out))
        self.b = rng.uniform(-bound, bound, size=(d_out,))
        self.activation = activation
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.w.shape[0]:
            raise ValueError(f"expected input dim {self.w.shape[0]}, got {x.shape[1]}")
        z = x @ self.w + self.b
        y = _act_forward(z, self.activation)
        self._cache = (x, z, y)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("missing forward cache")
        x, z, y = self._cache
        dz = _act_backward(dy, z, y, self.activation)
        self.dw = x.T @ dz
        self.db = dz.sum(axis=0)
        return dz @ self.w.T

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def grads(self):
        return [("w", self.dw), ("b", self.db)]


class PolicyNetwork:
    """Template-built network; deterministic initialization from init_seed."""

    def __init__(self, template: PolicyTemplate, output_spec: str = OUTPUT_DISCRETE,
                 init_seed: int = 0, n_actions: int = 25,
                 log_std_init: float = math.log(0.5)):
        if output_spec not in (OUTPUT_DISCRETE, OUTPUT_CONTINUOUS):
            raise ValueError(f"unknown output_spec {output_spec!r}")
        self.template = template
        self.output_spec = output_spec
        self.n_actions = n_actions
        self.init_seed = init_seed
        rng = np.random.Generator(np.random.PCG64(init_seed))

        filters = template.num_filters
        self.convs = []
        c_in = 1
        for _ in range(template.num_layers):
            self.convs.append(Conv1d(c_in, filters, "relu", rng))
            c_in = filters
        trunk_in = template.n_rays * filters + 6
        self.trunk = []
        d_in = trunk_in
        for _ in range(template.num_layers):
            self.trunk.append(Dense(d_in, filters, "relu", rng))
            d_in = filters
        if output_spec == OUTPUT_DISCRETE:
            self.head = Dense(filters, n_actions, None, rng)
            self.value_head = None
            self.log_std = None
        else:
            self.head = Dense(filters, 2, "tanh", rng)
            self.value_head = Dense(filters, 1, None, rng)
            self.log_std = np.full(2, log_std_init, dtype=np.float64)
        self.d_log_std = None if self.log_std is None else np.zeros_like(self.log_std)
        self._flat_shape = None

    # -- introspection ------------------------------------------------------

    @property
    def input_size(self) -> int:
        return self.template.n_rays + 6

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.convs):
            out.extend((f"conv{i}.{n}", p) for n, p in layer.params())
        for i, layer in enumerate(self.trunk):
            out.extend((f"dense{i}.{n}", p) for n, p in layer.params())
        out.extend((f"head.{n}", p) for n, p in self.head.params())
        if self.value_head is not None:
            out.extend((f"value.{n}", p) for n, p in self.value_head.params())
        if self.log_std is not None:
            out.append(("log_std", self.log_std))
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.convs):
            out.update({f"conv{i}.{n}": g for n, g in layer.grads()})
        for i, layer in enumerate(self.trunk):
            out.update({f"dense{i}.{n}": g for n, g in layer.grads()})
        out.update({f"head.{n}": g for n, g in self.head.grads()})
        if self.value_head is not None:
            out.update({f"value.{n}": g for n, g in self.value_head.grads()})
        if self.log_std is not None:
            out["log_std"] = self.d_log_std
        return out

    @property
    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def copy(self) -> "PolicyNetwork":
        clone = PolicyNetwork(self.template, self.output_spec, self.init_seed,
                              self.n_actions)
        clone.load_flat(self.flat_params())
        return clone

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for _, p in self.parameters()])

    def load_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for _, p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    # -- forward / backward --------------------------------------------------

    def forward(self, depth: np.ndarray, velocity: np.ndarray, position: np.ndarray,
                mask: AblationMask | None = None) -> dict[str, np.ndarray]:
        depth = np.atleast_2d(np.asarray(depth, dtype=np.float64))
        velocity = np.atleast_2d(np.asarray(velocity, dtype=np.float64))
        position = np.atleast_2d(np.asarray(position, dtype=np.float64))
        batch = depth.shape[0]
        if depth.shape != (batch, self.template.n_rays):
            raise ValueError(f"depth must be (B, {self.template.n_rays}), got {depth.shape}")
        if velocity.shape != (batch, 3) or position.shape != (batch, 3):
            raise ValueError("velocity and position must be (B, 3)")
        if mask is not None and mask.any:
            if mask.zero_depth:
                depth = np.zeros_like(depth)
            if mask.zero_velocity:
                velocity = np.zeros_like(velocity)
            if mask.zero_position:
                position = np.zeros_like(position)

        x = depth[:, :, None]
        for conv in self.convs:
            x = conv.forward(x)
        self._flat_shape = x.shape
        h = np.concatenate([x.reshape(batch, -1), velocity, position], axis=1)
        for layer in self.trunk:
            h = layer.forward(h)
        if self.output_spec == OUTPUT_DISCRETE:
            return {"q": self.head.forward(h)}
        return {"mean": self.head.forward(h), "value": self.value_head.forward(h)}

    def forward_obs(self, observation, mask: AblationMask | None = None) -> dict:
        """Single-observation forward; returns unbatched output arrays."""
        out = self.forward(observation.depth[None, :],
                           np.asarray(observation.velocity)[None, :],
                           np.asarray(observation.position)[None, :], mask)
        return {k: v[0] for k, v in out.items()}

    def backward(self, upstream: dict[str, np.ndarray]) -> None:
        """Exact reverse-mode gradients of sum(outputs * upstream) w.r.t params."""
        if self._flat_shape is None:
            raise RuntimeError("missing forward cache")
        if self.output_spec == OUTPUT_DISCRETE:
            dh = self.head.backward(np.asarray(upstream["q"], dtype=np.float64))
        else:
            dh = self.head.backward(np.asarray(upstream["mean"], dtype=np.float64))
            if "value" in upstream:
                dh = dh + self.value_head.backward(
                    np.asarray(upstream["value"], dtype=np.float64))
        for layer in reversed(self.trunk):
            dh = layer.backward(dh)
        batch, n, f = self._flat_shape
        dx = dh[:, :n * f].reshape(batch, n, f)
        for conv in reversed(self.convs):
            dx = conv.backward(dx)

    def greedy_action(self, observation, mask: AblationMask | None = None):
        """Deterministic action: argmax Q (lowest id wins ties) or Tanh mean."""
        out = self.forward_obs(observation, mask)
        if self.output_spec == OUTPUT_DISCRETE:
            return int(np.argmax(out["q"]))
        return out["mean"]


def build_policy(template: PolicyTemplate, output_spec: str = OUTPUT_DISCRETE,
                 init_seed: int = 0, n_actions: int = 25) -> PolicyNetwork:
    return PolicyNetwork(template, output_spec, init_seed, n_actions)


class Adam:
    """Adam with bias correction; updates network parameters in place."""

    def __init__(self, net: PolicyNetwork, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in net.parameters()}
        self.v = {name: np.zeros_like(p) for name, p in net.parameters()}

    def step(self) -> None:
        grads = self.net.gradients()
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for name, p in self.net.parameters():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.m.items():
            out[f"adam.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam.v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.m:
            self.m[name][...] = arrays[f"adam.m.{name}"]
            self.v[name][...] = arrays[f"adam.v.{name}"]


# --- checkpoint io -----------------------------------------------------------

def save_checkpoint(net: PolicyNetwork, path, metadata: dict | None = None,
                    dtype: str = "<f8",
                    extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write a checkpoint: magic, version byte, JSON header, raw arrays.

    Header is UTF-8 JSON preceded by a little-endian uint32 length; parameter
    bytes follow in header order, C-contiguous, in the declared dtype.
    """
    if dtype not in ("<f8", "<f4"):
        raise ValueError("dtype must be one of '<f8', '<f4'")
    params = net.parameters()
    extras = extra_arrays or {}
    header = {
        "version": CKPT_VERSION,
        "template": net.template.to_dict(),
        "output_spec": net.output_spec,
        "n_actions": net.n_actions,
        "dtype": dtype,
        "params": [{"name": name, "shape": list(p.shape)} for name, p in params],
        "extras": [{"name": name, "shape": list(a.shape)} for name, a in extras.items()],
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(bytes([CKPT_VERSION]))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p, dtype=np.dtype(dtype)).tobytes())
        for _, a in extras.items():
            fh.write(np.ascontiguousarray(a, dtype=np.dtype(dtype)).tobytes())


def load_checkpoint(path, expect_input_size: int | None = None):
    """Load (net, metadata, extra_arrays) from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 9 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if raw[4] != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version mismatch: {raw[4]}")
    header_len = int.from_bytes(raw[5:9], "little")
    if len(raw) < 9 + header_len:
        raise CheckpointError("corrupted checkpoint (truncated header)")
    try:
        header = json.loads(raw[9:9 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("corrupted checkpoint (bad header)") from exc
    template = PolicyTemplate(**header["template"])
    if expect_input_size is not None and template.n_rays + 6 != expect_input_size:
        raise CheckpointError(
            f"checkpoint input size {template.n_rays + 6} does not match "
            f"expected {expect_input_size}")
    net = PolicyNetwork(template, header["output_spec"], init_seed=0,
                        n_actions=header.get("n_actions", 25))
    dt = np.dtype(header["dtype"])
    offset = 9 + header_len
    by_name = dict(net.parameters())
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError("corrupted checkpoint (truncated payload)")
        arr = np.frombuffer(raw[offset:end], dtype=dt).reshape(shape)
        target = by_name.get(entry["name"])
        if target is None or target.shape != shape:
            raise CheckpointError(f"unexpected parameter {entry['name']} {shape}")
        target[...] = arr.astype(np.float64)
        offset = end
    extras = {}
    for entry in header.get("extras", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError("corrupted checkpoint (truncated payload)")
        extras[entry["name"]] = np.frombuffer(raw[offset:end], dtype=dt).reshape(
            shape).astype(np.float64)
        offset = end
    return net, header.get("metadata", {}), extras
