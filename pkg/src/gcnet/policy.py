"""Feed-forward guidance policies with analytic derivatives.

Architecture: a fixed input scaling (elementwise division by per-component
state scales), a stack of softplus hidden layers, and a linear output layer
whose components are interpreted per head tag:

* ``linear``  -- raw value (the three thrust-direction components; the
  direction fed to the dynamics is the normalized raw vector)
* ``sigmoid`` -- logistic squash (the landing throttle)

Parameters live in one flat vector: for each layer, the weight matrix in
row-major order, then the bias.  All derivatives are computed analytically:

* softplus'(z) = logistic(z), so hidden Jacobians reuse the activations
* normalizing y = w/|w| contributes (I - y y^T)/|w|
* the parameter Jacobian accumulates per-layer outer products of the
  backpropagated head rows with layer inputs.

The serialized form is a small self-describing binary: magic, version, a
JSON header (dims, activation tags, head tags, input scale), then the flat
parameters as little-endian float64.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ZeroNormPredictionError

WEIGHTS_MAGIC = b"GCNETWTS"
WEIGHTS_VERSION = 1

# Raw direction vectors with norm at or below this are rejected.
DIRECTION_NORM_FLOOR = 1e-14


def softplus(z: np.ndarray) -> np.ndarray:
    # overflow-safe: softplus(z) = max(z, 0) + log1p(exp(-|z|))
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def logistic(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def layer_shapes(input_dim: int, hidden: tuple[int, ...],
                 output_dim: int) -> list[tuple[int, int]]:
    dims = [input_dim, *hidden, output_dim]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def parameter_count(input_dim: int, hidden: tuple[int, ...],
                    output_dim: int) -> int:
    return sum(n_out * n_in + n_out
               for n_out, n_in in layer_shapes(input_dim, hidden, output_dim))


@dataclass
class PolicyNetwork:
    """Flat-parameter MLP with head tags and fixed input scaling."""

    input_dim: int
    hidden: tuple[int, ...]
    head_tags: tuple[str, ...]        # ("linear",)*3 or ("sigmoid", "linear"*3)
    theta: np.ndarray
    input_scale: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.head_tags = tuple(self.head_tags)
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        for tag in self.head_tags:
            if tag not in ("linear", "sigmoid"):
                raise ConfigError(f"unknown head tag {tag!r}")
        if self.input_scale is None:
            self.input_scale = np.ones(self.input_dim)
        self.input_scale = np.asarray(self.input_scale, float)
        if self.input_scale.shape != (self.input_dim,):
            raise ConfigError("input_scale must match input_dim")
        if np.any(self.input_scale <= 0.0):
            raise ConfigError("input_scale must be positive")
        expected = parameter_count(self.input_dim, self.hidden, self.output_dim)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (expected,):
            raise ConfigError(
                f"theta must have {expected} entries, got {self.theta.shape}")

    # -- structure -----------------------------------------------------------

    @property
    def output_dim(self) -> int:
        return len(self.head_tags)

    @property
    def param_count(self) -> int:
        return self.theta.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat parameter vector."""
        out = []
        offset = 0
        for n_out, n_in in layer_shapes(self.input_dim, self.hidden,
                                        self.output_dim):
            w = self.theta[offset:offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            b = self.theta[offset:offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def with_theta(self, theta: np.ndarray) -> "PolicyNetwork":
        return PolicyNetwork(self.input_dim, self.hidden, self.head_tags,
                             np.array(theta, dtype=np.float64),
                             self.input_scale.copy())

    # -- batched forward (training path) -------------------------------------

    def forward_batch(self, x: np.ndarray,
                      want_cache: bool = False):
        """Head outputs for rows of physical states.

        Returns (n, output_dim) with sigmoid heads squashed and linear heads
        raw (un-normalized direction components), plus the layer cache when
        requested by the backward pass.
        """
        x = np.atleast_2d(np.asarray(x, float))
        a = x / self.input_scale
        inputs = [a]
        gates = []
        layer_list = self.layers()
        for w, b in layer_list[:-1]:
            z = a @ w.T + b
            a = softplus(z)
            gates.append(logistic(z))   # softplus' = logistic, reused backward
            inputs.append(a)
        w, b = layer_list[-1]
        raw = a @ w.T + b
        out = raw.copy()
        for j, tag in enumerate(self.head_tags):
            if tag == "sigmoid":
                out[:, j] = logistic(raw[:, j])
        if want_cache:
            return out, (inputs, gates, raw)
        return out

    def backprop_batch(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of sum(grad_out * heads) w.r.t. theta.

        ``grad_out`` are cotangents of the head outputs (post-sigmoid for
        sigmoid heads); rows index batch samples.
        """
        inputs, gates, raw = cache
        delta = np.array(grad_out, dtype=np.float64)
        for j, tag in enumerate(self.head_tags):
            if tag == "sigmoid":
                s = logistic(raw[:, j])
                delta[:, j] *= s * (1.0 - s)
        grad = np.empty_like(self.theta)
        layer_list = self.layers()
        offset = self.theta.size
        for idx in range(len(layer_list) - 1, -1, -1):
            w, b = layer_list[idx]
            a_in = inputs[idx]
            n_out, n_in = w.shape
            offset -= n_out
            grad[offset:offset + n_out] = delta.sum(axis=0)
            offset -= n_out * n_in
            grad[offset:offset + n_out * n_in] = (delta.T @ a_in).ravel()
            if idx > 0:
                delta = (delta @ w) * gates[idx - 1]
        return grad

    # -- single-state evaluation with analytic Jacobians ----------------------

    def _forward_single(self, x: np.ndarray):
        a = np.asarray(x, float) / self.input_scale
        inputs = [a]
        gates = []
        layer_list = self.layers()
        for w, b in layer_list[:-1]:
            z = w @ a + b
            a = softplus(z)
            gates.append(logistic(z))
            inputs.append(a)
        w, b = layer_list[-1]
        raw = w @ a + b
        return raw, inputs, gates, layer_list

    def heads(self, x: np.ndarray) -> np.ndarray:
        """Head outputs (sigmoid applied; directions raw) for one state."""
        raw = self._forward_single(x)[0]
        out = raw.copy()
        for j, tag in enumerate(self.head_tags):
            if tag == "sigmoid":
                out[j] = float(logistic(np.array([raw[j]]))[0])
        return out

    def heads_and_jacobians(self, x: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(heads, d heads/dx, d heads/dtheta) for one physical state.

        Derivatives are with respect to the physical input (the fixed input
        scaling is folded in) and the flat parameter vector.
        """
        raw, inputs, gates, layer_list = self._forward_single(x)
        out_dim = self.output_dim
        heads = raw.copy()
        # rows of the chain product, seeded at the raw outputs
        delta = np.eye(out_dim)
        for j, tag in enumerate(self.head_tags):
            if tag == "sigmoid":
                s = float(logistic(np.array([raw[j]]))[0])
                heads[j] = s
                delta[j, j] = s * (1.0 - s)
        dtheta = np.empty((out_dim, self.theta.size))
        offset = self.theta.size
        for idx in range(len(layer_list) - 1, -1, -1):
            w, _ = layer_list[idx]
            a_in = inputs[idx]
            n_out, n_in = w.shape
            offset -= n_out
            dtheta[:, offset:offset + n_out] = delta
            offset -= n_out * n_in
            block = delta[:, :, None] * a_in[None, None, :]
            dtheta[:, offset:offset + n_out * n_in] = \
                block.reshape(out_dim, n_out * n_in)
            if idx > 0:
                delta = (delta @ w) * gates[idx - 1][None, :]
            else:
                dx = (delta @ w) / self.input_scale[None, :]
        return heads, dx, dtheta

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "head_tags": list(self.head_tags),
            "hidden_activation": "softplus",
            "input_scale": self.input_scale.tolist(),
            "param_count": int(self.theta.size),
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(WEIGHTS_MAGIC)
            fh.write(struct.pack("<II", WEIGHTS_VERSION, len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.theta, "<f8").tobytes())

    @staticmethod
    def load(path) -> "PolicyNetwork":
        with open(path, "rb") as fh:
            data = fh.read()
        stream = io.BytesIO(data)
        magic = stream.read(len(WEIGHTS_MAGIC))
        if magic != WEIGHTS_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        version, blob_len = struct.unpack("<II", stream.read(8))
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weights version {version}")
        try:
            header = json.loads(stream.read(blob_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("corrupt weights header") from exc
        if header.get("hidden_activation") != "softplus":
            raise FormatError("unsupported hidden activation")
        raw = stream.read()
        expected = header["param_count"] * 8
        if len(raw) != expected:
            raise FormatError(
                f"truncated parameter payload: {len(raw)} != {expected} bytes")
        theta = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return PolicyNetwork(
            input_dim=int(header["input_dim"]),
            hidden=tuple(header["hidden"]),
            head_tags=tuple(header["head_tags"]),
            theta=theta,
            input_scale=np.asarray(header["input_scale"], float),
        )


def initialize_policy(problem_kind: str, input_scale: np.ndarray,
                      hidden: tuple[int, ...] = (32, 32, 32),
                      seed: int = 0) -> PolicyNetwork:
    """Glorot-uniform initialization for one of the two problems."""
    if problem_kind == "transfer":
        input_dim, head_tags = 6, ("linear", "linear", "linear")
    elif problem_kind == "landing":
        input_dim, head_tags = 7, ("sigmoid", "linear", "linear", "linear")
    else:
        raise ConfigError(f"unknown problem kind {problem_kind!r}")
    rng = np.random.default_rng(seed)
    pieces = []
    for n_out, n_in in layer_shapes(input_dim, tuple(hidden), len(head_tags)):
        limit = np.sqrt(6.0 / (n_in + n_out))
        pieces.append(rng.uniform(-limit, limit, size=n_out * n_in))
        pieces.append(np.zeros(n_out))
    return PolicyNetwork(input_dim=input_dim, hidden=tuple(hidden),
                         head_tags=head_tags, theta=np.concatenate(pieces),
                         input_scale=np.asarray(input_scale, float))


def normalize_direction(raw: np.ndarray) -> np.ndarray:
    """Unit vector from a raw direction head; rejects vanishing norms."""
    n = float(np.linalg.norm(raw))
    if n <= DIRECTION_NORM_FLOOR:
        raise ZeroNormPredictionError(f"direction norm {n} below floor")
    return raw / n


def direction_slice(head_tags: tuple[str, ...]) -> slice:
    """Index range of the three linear direction components."""
    linear = [j for j, tag in enumerate(head_tags) if tag == "linear"]
    if len(linear) != 3 or linear != list(range(linear[0], linear[0] + 3)):
        raise ConfigError("head tags must contain 3 contiguous linear outputs")
    return slice(linear[0], linear[0] + 3)
