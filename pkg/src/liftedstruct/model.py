"""A small feed-forward embedding network with exact backprop and SGD.

Checkpoint byte layout (version 1)::

    b"LSEMLP\\x00\\x01"                      8-byte magic + version
    uint32 little-endian                    header length H in bytes
    H bytes of UTF-8 JSON                   sorted keys: version, layer_widths,
                                            activations, init_seed, init_scale,
                                            l2_normalize, blocks=[[name, shape], ...]
    parameter blocks                        float64 little-endian, row-major,
                                            in header order (W0, b0, W1, b1, ...)

``W{i}`` has shape (width_in, width_out) so a layer computes ``h @ W + b``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError

ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_MAGIC = b"LSEMLP\x00\x01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activations: tuple[str, ...] | None = None  # one per hidden layer; default relu
    init_seed: int = 0
    init_scale: float | None = None  # None -> 1/sqrt(fan_in) per layer
    l2_normalize: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValidationError("layer_widths needs an input width and at least one layer")
        if min(widths) < 1:
            raise ValidationError(f"all widths must be >= 1, got {widths}")
        acts = self.activations
        if acts is None:
            acts = ("relu",) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2:
            raise ValidationError(f"expected {len(widths) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {a!r}")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValidationError("init_scale must be positive")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]


def param_names(spec: MlpSpec) -> list[str]:
    names = []
    for i in range(spec.n_layers):
        names += [f"W{i}", f"b{i}"]
    return names


def init_params(spec: MlpSpec) -> dict[str, np.ndarray]:
    """Uniform init in [-s, s], s = init_scale or 1/sqrt(fan_in); biases too."""
    rng = np.random.default_rng(spec.init_seed)
    params = {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        s = spec.init_scale if spec.init_scale is not None else 1.0 / math.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-s, s, size=(fan_in, fan_out))
        params[f"b{i}"] = rng.uniform(-s, s, size=fan_out)
    return params


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer
    unnormalized: np.ndarray | None = None


def forward(spec: MlpSpec, params: dict, inputs: np.ndarray, return_cache: bool = False):
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValidationError(f"expected inputs of shape (n, {spec.input_dim}), got {X.shape}")
    cache = ForwardCache()
    h = X
    for i in range(spec.n_layers):
        cache.inputs.append(h)
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        cache.pre.append(z)
        h = _act(spec.activations[i], z) if i < spec.n_layers - 1 else z
    if spec.l2_normalize:
        cache.unnormalized = h
        h = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
    return (h, cache) if return_cache else h


def backward(spec: MlpSpec, params: dict, cache: ForwardCache, upstream: np.ndarray):
    """Reverse pass: returns (parameter gradients, input gradient)."""
    g = np.asarray(upstream, dtype=np.float64)
    n = cache.inputs[0].shape[0]
    if g.shape != (n, spec.output_dim):
        raise ValidationError(f"upstream gradient shape {g.shape} != {(n, spec.output_dim)}")
    if spec.l2_normalize:
        u = cache.unnormalized
        norm = np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-12)
        y = u / norm
        g = (g - y * np.einsum("ij,ij->i", g, y)[:, None]) / norm
    grads = {}
    for i in reversed(range(spec.n_layers)):
        if i < spec.n_layers - 1:
            z = cache.pre[i]
            g = _act_grad(spec.activations[i], z, _act(spec.activations[i], z), g)
        grads[f"W{i}"] = cache.inputs[i].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ params[f"W{i}"].T
    return grads, g


# ---------------------------------------------------------------------------
# optimizer


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)
    iteration: int = 0
    max_iterations: int = 20_000
    lr_multipliers: dict = field(default_factory=dict)  # param name -> multiplier

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")


def last_layer_multipliers(spec: MlpSpec, factor: float = 10.0) -> dict[str, float]:
    last = spec.n_layers - 1
    return {f"W{last}": factor, f"b{last}": factor}


def sgd_step(params: dict, grads: dict, state: OptimizerState) -> tuple[dict, OptimizerState]:
    """v <- momentum v - lr g ;  p <- p + v.  Aborts before touching anything on a non-finite gradient."""
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ValidationError(f"gradient for {name} has shape {np.shape(g)}, parameter has {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r} at iteration {state.iteration}")
    new_params = dict(params)
    for name, g in grads.items():
        lr = state.learning_rate * state.lr_multipliers.get(name, 1.0)
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(params[name], dtype=np.float64)
        v = state.momentum * v - lr * np.asarray(g, dtype=np.float64)
        state.velocity[name] = v
        new_params[name] = params[name] + v
    state.iteration += 1
    return new_params, state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, spec: MlpSpec, params: dict) -> None:
    names = param_names(spec)
    header = {
        "version": CHECKPOINT_VERSION,
        "layer_widths": list(spec.layer_widths),
        "activations": list(spec.activations),
        "init_seed": spec.init_seed,
        "init_scale": spec.init_scale,
        "l2_normalize": spec.l2_normalize,
        "blocks": [[n, list(np.shape(params[n]))] for n in names],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[MlpSpec, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {header.get('version')}")
    spec = MlpSpec(tuple(header["layer_widths"]), tuple(header["activations"]), header["init_seed"],
                   header["init_scale"], header["l2_normalize"])
    offset = 12 + hlen
    params = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        params[name] = block.reshape(shape)
        offset += 8 * count
    if offset != len(data):
        raise ValidationError(f"{path}: {len(data) - offset} trailing bytes")
    for name, p in params.items():
        expect = None
        i = int(name[1:])
        expect = (spec.layer_widths[i], spec.layer_widths[i + 1]) if name[0] == "W" else (spec.layer_widths[i + 1],)
        if p.shape != expect:
            raise ValidationError(f"{path}: block {name} has shape {p.shape}, expected {expect}")
    return spec, params
