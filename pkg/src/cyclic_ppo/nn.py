"""Minimal tanh MLPs with hand-derived gradients, plus policy distribution heads.

The architecture family is fixed (affine layers, tanh hidden activations,
identity output), which keeps backprop an explicit, auditable chain rule
instead of a generic autodiff graph. Distribution heads cover a
categorical over discrete actions and a diagonal Gaussian with a
state-independent log-std parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Mlp:
    """Feed-forward network: ``weights[i]`` maps layer i, shape (in_i, out_i)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[0]} does not match "
                                 f"previous output {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def orthogonal(n_in: int, n_out: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal weight matrix scaled by ``gain`` (sign-fixed for determinism)."""
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def mlp_init(sizes: tuple[int, ...], rng: np.random.Generator,
             hidden_gain: float = math.sqrt(2.0), out_gain: float = 1.0) -> Mlp:
    """Orthogonally initialized MLP with zero biases.

    Hidden layers get ``hidden_gain``; the output layer gets ``out_gain``
    (small for policy heads so early action distributions stay near
    uniform, 1.0 for value heads).
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(orthogonal(sizes[i], sizes[i + 1], gain, rng))
        biases.append(np.zeros(sizes[i + 1]))
    net = Mlp(weights=weights, biases=biases)
    if not all(np.all(np.isfinite(w)) for w in net.weights):
        raise ValueError("non-finite initialization")
    return net


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Apply the network; accepts a single input (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x.reshape(1, -1) if single else x
    if h.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input dim {h.shape[1]} != first layer dim {net.weights[0].shape[0]}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i != last:
            h = np.tanh(h)
    return h[0] if single else h


def backward(net: Mlp, x: np.ndarray,
             upstream: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of ``sum(forward(net, x) * upstream)`` w.r.t. every parameter.

    Recomputes the forward activations, then runs the chain rule backwards:
    tanh' is expressed through the cached activations as ``1 - a**2``.
    Batched inputs accumulate (sum) gradients over the batch.

    Returns:
        (weight_grads, bias_grads), shaped like ``net.weights``/``net.biases``.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
        upstream = upstream.reshape(1, -1)
    if x.shape[1] != net.weights[0].shape[0]:
        raise ValueError("input dim does not match first layer")
    if upstream.shape != (x.shape[0], net.weights[-1].shape[1]):
        raise ValueError(f"upstream shape {upstream.shape} does not match "
                         f"({x.shape[0]}, {net.weights[-1].shape[1]})")

    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)

    weight_grads: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    bias_grads: list[np.ndarray] = [np.empty(0)] * len(net.biases)
    delta = upstream
    for i in range(last, -1, -1):
        weight_grads[i] = acts[i].T @ delta
        bias_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    return weight_grads, bias_grads


# ---------------------------------------------------------------------------
# parameter vector (de)serialization helpers

def flatten_mlp(net: Mlp) -> np.ndarray:
    """Concatenate all parameters: per layer, weight rows then bias."""
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten_mlp(net: Mlp, vec: np.ndarray) -> Mlp:
    """Rebuild an MLP with ``net``'s shapes from a flat parameter vector."""
    if vec.shape != (net.n_params,):
        raise ValueError(f"expected {net.n_params} parameters, got {vec.shape}")
    weights, biases, off = [], [], 0
    for w, b in zip(net.weights, net.biases):
        weights.append(vec[off:off + w.size].reshape(w.shape).copy())
        off += w.size
        biases.append(vec[off:off + b.size].copy())
        off += b.size
    return Mlp(weights=weights, biases=biases)


def flatten_grads(weight_grads: list[np.ndarray], bias_grads: list[np.ndarray]) -> np.ndarray:
    parts = []
    for dw, db in zip(weight_grads, bias_grads):
        parts.append(dw.ravel())
        parts.append(db)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# distribution heads

@dataclass
class Categorical:
    """Distribution over ``len(logits)`` discrete actions."""

    logits: np.ndarray

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.ndim != 1 or not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be a finite 1-D vector")


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over a continuous action vector."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_std = np.asarray(self.log_std, dtype=float)
        if self.mean.shape != self.log_std.shape or self.mean.ndim != 1:
            raise ValueError("mean and log_std must be 1-D vectors of equal length")
        if np.any(self.log_std < LOG_STD_MIN) or np.any(self.log_std > LOG_STD_MAX):
            raise ValueError(f"log_std outside [{LOG_STD_MIN}, {LOG_STD_MAX}]")


DistParams = Categorical | DiagGaussian


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a (n, k) logits matrix.

    Works entirely on max-shifted logits, so adding an exactly
    representable constant to a row leaves the result bit-identical.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def categorical_log_probs(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    ls = log_softmax(logits)
    return ls[np.arange(logits.shape[0]), actions]


def categorical_entropies(logits: np.ndarray) -> np.ndarray:
    ls = log_softmax(logits)
    return -(np.exp(ls) * ls).sum(axis=1)


def gaussian_log_probs(mean: np.ndarray, log_std: np.ndarray,
                       actions: np.ndarray) -> np.ndarray:
    z = (actions - mean) / np.exp(log_std)
    return -0.5 * (z ** 2).sum(axis=1) - log_std.sum() - 0.5 * mean.shape[1] * LOG_2PI


def gaussian_entropy_value(log_std: np.ndarray) -> float:
    return float(log_std.sum() + 0.5 * log_std.shape[0] * (1.0 + LOG_2PI))


def log_prob(dist: DistParams, action) -> float:
    """Log-density (or log-mass) of ``action`` under ``dist``."""
    if isinstance(dist, Categorical):
        a = int(action)
        if not 0 <= a < dist.logits.shape[0]:
            raise ValueError(f"action {a} outside [0, {dist.logits.shape[0]})")
        return float(categorical_log_probs(dist.logits[None, :], np.array([a]))[0])
    a = np.asarray(action, dtype=float)
    if a.shape != dist.mean.shape:
        raise ValueError(f"action shape {a.shape} != mean shape {dist.mean.shape}")
    return float(gaussian_log_probs(dist.mean[None, :], dist.log_std, a[None, :])[0])


def entropy(dist: DistParams) -> float:
    """Closed-form entropy of the distribution."""
    if isinstance(dist, Categorical):
        return float(categorical_entropies(dist.logits[None, :])[0])
    return gaussian_entropy_value(dist.log_std)


def sample_action(dist: DistParams, rng: np.random.Generator):
    """Draw one action; returns ``(action, log_prob_of_action)``."""
    if isinstance(dist, Categorical):
        probs = np.exp(log_softmax(dist.logits[None, :])[0])
        u = rng.random()
        a = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        a = min(a, dist.logits.shape[0] - 1)
        return a, log_prob(dist, a)
    eps = rng.standard_normal(dist.mean.shape[0])
    a = dist.mean + np.exp(dist.log_std) * eps
    return a, log_prob(dist, a)


# ---------------------------------------------------------------------------
# policy container

@dataclass
class Policy:
    """Policy parameters: action-head MLP plus a log-std vector when continuous."""

    mlp: Mlp
    log_std: np.ndarray | None = None

    @property
    def n_params(self) -> int:
        return self.mlp.n_params + (0 if self.log_std is None else self.log_std.size)


def policy_init(obs_dim: int, action_dim: int, discrete: bool,
                rng: np.random.Generator, hidden: tuple[int, ...] = (64, 64)) -> Policy:
    """Policy net with a small-gain output head; log-std starts at zero."""
    mlp = mlp_init((obs_dim, *hidden, action_dim), rng, out_gain=0.01)
    log_std = None if discrete else np.zeros(action_dim)
    return Policy(mlp=mlp, log_std=log_std)


def value_init(obs_dim: int, rng: np.random.Generator,
               hidden: tuple[int, ...] = (64, 64)) -> Mlp:
    return mlp_init((obs_dim, *hidden, 1), rng, out_gain=1.0)


def effective_log_std(policy: Policy) -> np.ndarray:
    """The log-std actually used by the distribution (clipped to valid range)."""
    return np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)


def log_std_grad_mask(policy: Policy) -> np.ndarray:
    """1 where the raw log-std is inside the clip range (gradient flows), else 0."""
    raw = policy.log_std
    return ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(float)


def policy_dist(policy: Policy, obs: np.ndarray) -> DistParams:
    """Action distribution for a single observation."""
    out = forward(policy.mlp, np.asarray(obs, dtype=float))
    if policy.log_std is None:
        return Categorical(logits=out)
    return DiagGaussian(mean=out, log_std=effective_log_std(policy))


def flatten_policy(policy: Policy) -> np.ndarray:
    vec = flatten_mlp(policy.mlp)
    if policy.log_std is None:
        return vec
    return np.concatenate([vec, policy.log_std])


def unflatten_policy(policy: Policy, vec: np.ndarray) -> Policy:
    n_mlp = policy.mlp.n_params
    mlp = unflatten_mlp(policy.mlp, vec[:n_mlp])
    log_std = None if policy.log_std is None else vec[n_mlp:].copy()
    return Policy(mlp=mlp, log_std=log_std)


# ---------------------------------------------------------------------------
# checkpoints: plain-text, layer shapes then row-major values

def _write_mlp(f, net: Mlp) -> None:
    f.write(f"mlp {len(net.weights)}\n")
    for w, b in zip(net.weights, net.biases):
        f.write(f"layer {w.shape[0]} {w.shape[1]}\n")
        f.write("w " + " ".join(repr(float(v)) for v in w.ravel()) + "\n")
        f.write("b " + " ".join(repr(float(v)) for v in b) + "\n")


def _read_mlp(lines: list[str], pos: int) -> tuple[Mlp, int]:
    head = lines[pos].split()
    if len(head) != 2 or head[0] != "mlp":
        raise ValueError(f"bad checkpoint header: {lines[pos]!r}")
    n_layers = int(head[1])
    pos += 1
    weights, biases = [], []
    for _ in range(n_layers):
        tag, n_in, n_out = lines[pos].split()
        if tag != "layer":
            raise ValueError(f"expected layer line, got {lines[pos]!r}")
        n_in, n_out = int(n_in), int(n_out)
        wvals = lines[pos + 1].split()
        bvals = lines[pos + 2].split()
        if wvals[0] != "w" or bvals[0] != "b":
            raise ValueError("expected w/b value lines")
        weights.append(np.array([float(v) for v in wvals[1:]]).reshape(n_in, n_out))
        biases.append(np.array([float(v) for v in bvals[1:]]))
        pos += 3
    return Mlp(weights=weights, biases=biases), pos


def save_policy(path, policy: Policy) -> None:
    with open(path, "w") as f:
        _write_mlp(f, policy.mlp)
        if policy.log_std is not None:
            f.write("log_std " + " ".join(repr(float(v)) for v in policy.log_std) + "\n")


def load_policy(path) -> Policy:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    mlp, pos = _read_mlp(lines, 0)
    log_std = None
    if pos < len(lines) and lines[pos].startswith("log_std"):
        log_std = np.array([float(v) for v in lines[pos].split()[1:]])
    return Policy(mlp=mlp, log_std=log_std)


def save_mlp(path, net: Mlp) -> None:
    with open(path, "w") as f:
        _write_mlp(f, net)


def load_mlp(path) -> Mlp:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    net, _ = _read_mlp(lines, 0)
    return net
