"""Fully connected networks with hand-written backprop, plus the Adam optimizer and checkpoint I/O.

Weights are stored ``(out, in)``; inputs are batched row-wise, so a layer
computes ``z = x @ W.T + b``.

Checkpoint layout (all integers and floats little-endian)::

    8 bytes   magic b"QTRKCKPT"
    uint32    format version (currently 1)
    uint32    header length H
    H bytes   UTF-8 JSON header: format_version, step, networks (name, dims,
              activation tags) and optimizers (name, network, hyperparameters,
              step count) in payload order, plus free-form meta
    payload   per network: W0, b0, W1, b1, ... as row-major float64;
              then per optimizer: first moments, then second moments, in the
              same array order as its network
    uint32    CRC-32 of the header and payload bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
CHECKPOINT_MAGIC = b"QTRKCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Mlp:
    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        for tag in (self.hidden_activation, self.output_activation):
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``W0, b0, W1, b1, ...`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.hidden_activation, self.output_activation)

    def load_arrays(self, arrays) -> None:
        for dst, src in zip(self.arrays(), arrays):
            dst[...] = src


def mlp_init(dims, output_activation: str = "linear", seed=0, hidden_activation: str = "relu") -> Mlp:
    """Fan-in uniform init: He-uniform hidden layers, ``1/sqrt(fan_in)`` output layer, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        limit = np.sqrt(1.0 / fan_in) if last else np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, hidden_activation, output_activation)


def _act(tag, z):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _act_grad(tag, z, a, g):
    if tag == "relu":
        return g * (z > 0.0)
    if tag == "tanh":
        return g * (1.0 - a * a)
    return g


def _as_batch(params: Mlp, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.dims[0]:
        raise ValueError(f"input has shape {x.shape}, network expects {params.dims[0]} features")
    return x2, single


def mlp_forward(params: Mlp, x) -> np.ndarray:
    y, _ = forward_with_cache(params, x)
    return y


def forward_with_cache(params: Mlp, x):
    h, single = _as_batch(params, x)
    cache = [h]
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = _act(params.output_activation if i == n - 1 else params.hidden_activation, z)
        cache += [z, h]
    return (h[0] if single else h), (cache, single)


def mlp_backward(params: Mlp, cache, grad_out, param_grads: bool = True, input_grad: bool = True):
    """Backprop ``grad_out`` (dL/dy, same shape as the forward output).

    Returns ``(grads, grad_x)`` where ``grads`` follows ``params.arrays()``
    order and is summed over the batch. Either part can be skipped (returned
    as ``None``) when the caller does not need it.
    """
    acts, single = cache
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if single else g
    n = len(params.weights)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        z, a = acts[2 * i + 1], acts[2 * i + 2]
        tag = params.output_activation if i == n - 1 else params.hidden_activation
        g = _act_grad(tag, z, a, g)
        if param_grads:
            grads[2 * i] = g.T @ acts[2 * i]
            grads[2 * i + 1] = g.sum(axis=0)
        if i or input_grad:
            g = g @ params.weights[i]
    if not input_grad:
        return grads, None
    return (grads if param_grads else None), (g[0] if single else g)


def critic_action_grad(critic: Mlp, s, a) -> np.ndarray:
    """dQ/da for a critic whose input is ``[s | a]``."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    x = np.concatenate((s, a), axis=-1)
    q, cache = forward_with_cache(critic, x)
    _, gx = mlp_backward(critic, cache, np.ones_like(q), param_grads=False)
    return gx[..., s.shape[-1]:]


@dataclass
class Adam:
    """Bias-corrected Adam whose step size decays multiplicatively once per episode."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 1.0
    scale: float = 1.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Mlp, **kw) -> "Adam":
        opt = cls(**kw)
        opt.m = [np.zeros_like(p) for p in params.arrays()]
        opt.v = [np.zeros_like(p) for p in params.arrays()]
        return opt

    @property
    def effective_lr(self) -> float:
        return self.lr * self.scale

    def end_episode(self, count: int = 1) -> None:
        self.scale *= self.decay ** count

    def step(self, params: Mlp, grads) -> None:
        """In-place descent step on ``params`` for gradients of a loss to minimize."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        lr = self.effective_lr
        for p, g, m, v in zip(params.arrays(), grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "decay": self.decay, "scale": self.scale, "t": self.t}


@dataclass
class Checkpoint:
    networks: dict
    optimizers: dict
    optimizer_targets: dict
    step: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, networks: dict, optimizers: dict | None = None, step: int = 0,
                    meta: dict | None = None, optimizer_targets: dict | None = None) -> None:
    """``optimizer_targets`` maps optimizer name -> network name (defaults to the same name)."""
    optimizers = optimizers or {}
    optimizer_targets = optimizer_targets or {}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": int(step),
        "networks": [{"name": k, "dims": net.dims, "hidden_activation": net.hidden_activation,
                      "output_activation": net.output_activation} for k, net in networks.items()],
        "optimizers": [{"name": k, "network": optimizer_targets.get(k, k), **opt.hyper()}
                       for k, opt in optimizers.items()],
        "meta": meta or {},
    }
    chunks = []
    for net in networks.values():
        chunks += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in net.arrays()]
    for opt in optimizers.values():
        chunks += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in opt.m + opt.v]
    payload = b"".join(chunks)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(head + payload)))


def _shapes(dims):
    out = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        out += [(fan_out, fan_in), (fan_out,)]
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    expect = f"expected format version {CHECKPOINT_VERSION}"
    if len(blob) < 16 or blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic; {expect})")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version} ({expect})")
    if len(blob) < 20 + hlen or struct.unpack("<I", blob[-4:])[0] != zlib.crc32(blob[16:-4]):
        raise CheckpointError(f"{path}: corrupted or truncated file, checksum mismatch (format version {version})")
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header ({expect}): {exc}") from exc
    payload = blob[16 + hlen:-4]
    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        if offset + 8 * n > len(payload):
            raise CheckpointError(f"{path}: truncated payload (format version {version})")
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
        return arr

    networks = {}
    for entry in header["networks"]:
        arrays = [take(s) for s in _shapes(entry["dims"])]
        networks[entry["name"]] = Mlp(arrays[0::2], arrays[1::2], entry["hidden_activation"], entry["output_activation"])
    optimizers, targets = {}, {}
    for entry in header["optimizers"]:
        net = networks[entry["network"]]
        shapes = [a.shape for a in net.arrays()]
        m = [take(s) for s in shapes]
        v = [take(s) for s in shapes]
        hyper = {k: entry[k] for k in ("lr", "beta1", "beta2", "eps", "decay", "scale", "t")}
        optimizers[entry["name"]] = Adam(m=m, v=v, **hyper)
        targets[entry["name"]] = entry["network"]
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes (format version {version})")
    return Checkpoint(networks, optimizers, targets, header["step"], header.get("meta", {}))
