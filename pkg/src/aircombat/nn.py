"""Fully connected tanh networks with hand-written backprop and Adam.

Weights follow ``h_next = act(W @ h + b)`` with ``W`` shaped (out, in).
Batched evaluation takes inputs of shape (B, in).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTOR_HIDDEN = (256, 256)
ACTOR_OUT = 4
CRITIC_OUT = 1
N_CONTINUOUS = 3
LOG_STD_BOUNDS = (-5.0, 2.0)

MAGIC = b"BVRM"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


class MLP:
    """Multilayer perceptron: hidden layers use ``activation``, output is linear."""

    def __init__(self, layer_sizes, weights=None, biases=None, activation="tanh", dtype=np.float32):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        self.activation = activation
        self.dtype = np.dtype(dtype)
        pairs = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if weights is None:
            weights = [np.zeros((o, i), self.dtype) for i, o in pairs]
        if biases is None:
            biases = [np.zeros(o, self.dtype) for _, o in pairs]
        self.weights = [np.asarray(w, self.dtype) for w in weights]
        self.biases = [np.asarray(b, self.dtype) for b in biases]
        for (i, o), w, b in zip(pairs, self.weights, self.biases):
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"parameter shapes {w.shape}/{b.shape} do not match layer {i}->{o}")

    @classmethod
    def initialized(cls, layer_sizes, rng: np.random.Generator, activation="tanh", dtype=np.float32) -> "MLP":
        """Uniform init, zero biases.

        Hidden layers use +-sqrt(3/fan_in) so pre-activations keep unit variance;
        the output layer uses the Glorot bound +-sqrt(6/(fan_in+fan_out)).
        """
        sizes = tuple(layer_sizes)
        weights = []
        n_layers = len(sizes) - 1
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out)) if k == n_layers - 1 else np.sqrt(3.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        return cls(sizes, weights, None, activation, dtype)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation, self.dtype)

    def forward(self, x, return_cache: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"input has {h.shape[-1]} features, network expects {self.layer_sizes[0]}")
        act = _ACTIVATIONS[self.activation][0]
        cache = [h]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if k == last else act(z)
            cache.append(h)
        out = h[0] if single else h
        return (out, cache) if return_cache else out

    __call__ = forward

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter.

        Returns a list aligned with :attr:`params` (dW0, db0, dW1, db1, ...).
        """
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None, :]
        dact = _ACTIVATIONS[self.activation][1]
        n = len(self.weights)
        dw, db = [None] * n, [None] * n
        for k in range(n - 1, -1, -1):
            dw[k] = g.T @ cache[k]
            db[k] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k]) * dact(cache[k])
        return [x for pair in zip(dw, db) for x in pair]


def actor_sizes(obs_dim: int) -> tuple[int, ...]:
    return (obs_dim, *ACTOR_HIDDEN, ACTOR_OUT)


def critic_sizes(obs_dim: int) -> tuple[int, ...]:
    return (obs_dim, *ACTOR_HIDDEN, CRITIC_OUT)


@dataclass
class PolicyParameters:
    actor: MLP
    critic: MLP
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(N_CONTINUOUS, np.float32))

    @classmethod
    def initialized(cls, obs_dim: int, rng: np.random.Generator, dtype=np.float32) -> "PolicyParameters":
        return cls(
            MLP.initialized(actor_sizes(obs_dim), rng, dtype=dtype),
            MLP.initialized(critic_sizes(obs_dim), rng, dtype=dtype),
            np.zeros(N_CONTINUOUS, dtype),
        )

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.actor.copy(), self.critic.copy(), self.log_std.copy())

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, *LOG_STD_BOUNDS, out=self.log_std)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.actor.params + self.critic.params + [self.log_std])


class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> bool:
        """Apply one update; returns False (and changes nothing) on non-finite gradients."""
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        if not all(np.all(np.isfinite(g)) for g in grads):
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return True


def clip_grad_norm(grads, max_norm: float):
    """Scale gradients so their joint L2 norm is at most ``max_norm``; returns (grads, norm)."""
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm


def serialize(params: PolicyParameters) -> bytes:
    """Binary model: magic, version, layer-size headers, float32 LE payload."""
    head = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for net in (params.actor, params.critic):
        head.append(struct.pack("<I", len(net.layer_sizes)))
        head.append(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    head.append(struct.pack("<I", len(params.log_std)))
    body = []
    for net in (params.actor, params.critic):
        for w, b in zip(net.weights, net.biases):
            body.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
            body.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    body.append(np.ascontiguousarray(params.log_std, dtype="<f4").tobytes())
    return b"".join(head + body)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"truncated model: need {n} bytes for {what} at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def deserialize(data: bytes) -> PolicyParameters:
    r = _Reader(bytes(data))
    magic = r.take(4, "magic tag")
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic tag {magic!r}, expected {MAGIC!r}")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (this build reads {FORMAT_VERSION})")
    sizes = []
    for name in ("actor", "critic"):
        n = r.u32(f"{name} layer count")
        if not 2 <= n <= 64:
            raise ModelFormatError(f"implausible {name} layer count {n}")
        sizes.append(struct.unpack(f"<{n}I", r.take(4 * n, f"{name} layer sizes")))
    n_std = r.u32("log-std length")
    nets = []
    for name, layer_sizes in zip(("actor", "critic"), sizes):
        weights, biases = [], []
        for k, (i, o) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            w = np.frombuffer(r.take(4 * i * o, f"{name} layer {k} weights"), dtype="<f4").reshape(o, i)
            b = np.frombuffer(r.take(4 * o, f"{name} layer {k} biases"), dtype="<f4")
            weights.append(w.astype(np.float32))
            biases.append(b.astype(np.float32))
        nets.append(MLP(layer_sizes, weights, biases))
    log_std = np.frombuffer(r.take(4 * n_std, "log-std"), dtype="<f4").astype(np.float32)
    if r.pos != len(r.data):
        raise ModelFormatError(f"{len(r.data) - r.pos} trailing bytes after model payload")
    return PolicyParameters(nets[0], nets[1], log_std)


def save(params: PolicyParameters, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load(path) -> PolicyParameters:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return deserialize(data)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
