"""Small numpy networks with hand-written gradients.

* a leaky-ReLU multilayer perceptron used as the Q-network,
* a single-layer recurrent network with a linear multi-step readout used as
  the lookahead state predictor,
* the bias-corrected Adam update,
* a binary checkpoint format shared by both network kinds.

Weights are stored as ``(fan_in, fan_out)`` so ``x @ W + b`` works on single
vectors and on batches alike. Gradients are returned as parameter objects of
the same type, so their shapes mirror the parameters exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01


def leaky_relu(x, alpha: float = LEAKY_SLOPE):
    # equals where(x >= 0, x, alpha*x) for 0 <= alpha <= 1
    return np.maximum(x, alpha * x)


def leaky_relu_grad(x, alpha: float = LEAKY_SLOPE):
    return np.where(x >= 0, 1.0, alpha)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class NetworkParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    alpha: float = LEAKY_SLOPE

    kind = "mlp"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i}: input {W.shape[0]} != previous output")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(a for pair in zip(self.weights, self.biases) for a in pair)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for i in range(len(self.weights)) for n in (f"W{i}", f"b{i}"))

    def with_arrays(self, arrays) -> "NetworkParams":
        arrays = list(arrays)
        return NetworkParams(tuple(arrays[0::2]), tuple(arrays[1::2]), self.alpha)

    def copy(self) -> "NetworkParams":
        return self.with_arrays(a.copy() for a in self.arrays)


@dataclass(frozen=True)
class RnnParams:
    """Elman cell ``h_t = lrelu(x_t Wx + h_{t-1} Wh + b)`` plus readout ``h_T Wo + bo``."""

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    horizon: int
    alpha: float = LEAKY_SLOPE

    kind = "rnn"

    def __post_init__(self):
        H = self.Wh.shape[0]
        if self.Wh.shape != (H, H) or self.Wx.shape[1] != H or self.b.shape != (H,):
            raise ValueError("recurrent weights do not chain")
        if self.Wo.shape[0] != H or self.bo.shape != (self.Wo.shape[1],):
            raise ValueError("readout weights do not chain")
        if self.Wo.shape[1] % self.horizon:
            raise ValueError("readout width must be a multiple of the horizon")

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[0]

    @property
    def state_dim(self) -> int:
        return self.Wo.shape[1] // self.horizon

    @property
    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.Wx, self.Wh, self.b, self.Wo, self.bo)

    @property
    def names(self) -> tuple[str, ...]:
        return ("Wx", "Wh", "b", "Wo", "bo")

    def with_arrays(self, arrays) -> "RnnParams":
        return RnnParams(*arrays, horizon=self.horizon, alpha=self.alpha)

    def copy(self) -> "RnnParams":
        return self.with_arrays(a.copy() for a in self.arrays)


def init_mlp(
    sizes: tuple[int, ...], rng: np.random.Generator, alpha: float = LEAKY_SLOPE
) -> NetworkParams:
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    weights = tuple(glorot_uniform(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:]))
    biases = tuple(np.zeros(b) for b in sizes[1:])
    return NetworkParams(weights, biases, alpha)


def init_rnn(
    input_dim: int,
    hidden: int,
    state_dim: int,
    horizon: int,
    rng: np.random.Generator,
    alpha: float = LEAKY_SLOPE,
) -> RnnParams:
    out = state_dim * horizon
    return RnnParams(
        Wx=glorot_uniform(input_dim, hidden, rng),
        Wh=glorot_uniform(hidden, hidden, rng),
        b=np.zeros(hidden),
        Wo=glorot_uniform(hidden, out, rng),
        bo=np.zeros(out),
        horizon=horizon,
        alpha=alpha,
    )


# ---------------------------------------------------------------- MLP


def _mlp_cache(p: NetworkParams, x: np.ndarray):
    pre, post = [], [x]
    a = x
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else leaky_relu(z, p.alpha)
        post.append(a)
    return pre, post


def mlp_forward(p: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.weights[0].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} != network input {p.weights[0].shape[0]}")
    return _mlp_cache(p, x)[1][-1]


def _mlp_backward(p: NetworkParams, pre, post, d_out: np.ndarray) -> NetworkParams:
    grads_w, grads_b = [], []
    delta = d_out
    for i in range(len(p.weights) - 1, -1, -1):
        a_in = post[i]
        if a_in.ndim == 1:
            grads_w.append(np.outer(a_in, delta))
            grads_b.append(delta.copy())
        else:
            grads_w.append(a_in.T @ delta)
            grads_b.append(delta.sum(axis=0))
        if i:
            delta = (delta @ p.weights[i].T) * leaky_relu_grad(pre[i - 1], p.alpha)
    return NetworkParams(tuple(grads_w[::-1]), tuple(grads_b[::-1]), p.alpha)


def mlp_gradient(p: NetworkParams, x, target_index: int, target_value: float) -> NetworkParams:
    """Gradient of ``(target_value - Q(x)[target_index])**2``."""
    x = np.asarray(x, dtype=float)
    pre, post = _mlp_cache(p, x)
    q = post[-1]
    if not 0 <= target_index < q.shape[-1]:
        raise ValueError(f"target index {target_index} out of range")
    d_out = np.zeros_like(q)
    d_out[target_index] = -2.0 * (target_value - q[target_index])
    return _mlp_backward(p, pre, post, d_out)


def mlp_batch_gradient(
    p: NetworkParams, X: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[NetworkParams, float]:
    """Mean squared TD error over a batch and its gradient."""
    pre, post = _mlp_cache(p, X)
    q = post[-1]
    rows = np.arange(len(X))
    err = targets - q[rows, actions]
    d_out = np.zeros_like(q)
    d_out[rows, actions] = -2.0 * err / len(X)
    return _mlp_backward(p, pre, post, d_out), float(np.mean(err**2))


# ---------------------------------------------------------------- RNN


def _rnn_cache(p: RnnParams, history: np.ndarray):
    # history: (..., h, input_dim)
    hs = [np.zeros(history.shape[:-2] + (p.hidden,))]
    zs = []
    for t in range(history.shape[-2]):
        z = history[..., t, :] @ p.Wx + hs[-1] @ p.Wh + p.b
        zs.append(z)
        hs.append(leaky_relu(z, p.alpha))
    y = hs[-1] @ p.Wo + p.bo
    return zs, hs, y


def rnn_forward(p: RnnParams, history, expected_length: int | None = None) -> np.ndarray:
    """Predict ``horizon`` future states; returns shape ``(..., horizon, state_dim)``."""
    history = np.asarray(history, dtype=float)
    if history.ndim < 2 or history.shape[-1] != p.input_dim:
        raise ValueError(f"history must end in (h, {p.input_dim}), got {history.shape}")
    if expected_length is not None and history.shape[-2] != expected_length:
        raise ValueError(f"history length {history.shape[-2]} != {expected_length}")
    y = _rnn_cache(p, history)[2]
    return y.reshape(y.shape[:-1] + (p.horizon, p.state_dim))


def rnn_gradient(p: RnnParams, history, target) -> tuple[RnnParams, float]:
    """Backpropagation through time for the mean squared prediction error.

    ``history`` may be one window ``(h, d)`` or a batch ``(n, h, d)``; the
    mean runs over every predicted value of every window.
    """
    history = np.asarray(history, dtype=float)
    zs, hs, y = _rnn_cache(p, history)
    target = np.asarray(target, dtype=float).reshape(y.shape)
    diff = y - target
    d_y = 2.0 * diff / diff.size
    batched = history.ndim == 3

    def outer(a, b):
        return a.T @ b if batched else np.outer(a, b)

    def colsum(a):
        return a.sum(axis=0) if batched else a

    dWo = outer(hs[-1], d_y)
    dbo = colsum(d_y)
    dWx = np.zeros_like(p.Wx)
    dWh = np.zeros_like(p.Wh)
    db = np.zeros_like(p.b)
    dh = d_y @ p.Wo.T
    for t in range(len(zs) - 1, -1, -1):
        dz = dh * leaky_relu_grad(zs[t], p.alpha)
        dWx += outer(history[..., t, :], dz)
        dWh += outer(hs[t], dz)
        db += colsum(dz)
        dh = dz @ p.Wh.T
    grad = RnnParams(dWx, dWh, db, dWo, dbo, horizon=p.horizon, alpha=p.alpha)
    return grad, float(np.mean(diff**2))


# ---------------------------------------------------------------- Adam


@dataclass(frozen=True)
class AdamState:
    """Adam moments for every parameter, stored as one flat vector each.

    ``moments()`` returns per-parameter views with the parameter shapes.
    """

    m: np.ndarray
    v: np.ndarray
    shapes: tuple[tuple[int, ...], ...]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, lr: float = 1e-3, **kw) -> "AdamState":
        shapes = tuple(a.shape for a in params.arrays)
        n = sum(a.size for a in params.arrays)
        return cls(m=np.zeros(n), v=np.zeros(n), shapes=shapes, lr=lr, **kw)

    def moments(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return _unflatten(self.m, self.shapes), _unflatten(self.v, self.shapes)


def _unflatten(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, i = [], 0
    for shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        out.append(flat[i : i + n].reshape(shape))
        i += n
    return out


def adam_step(params, grads, st: AdamState):
    """One bias-corrected Adam update; inputs are left untouched."""
    shapes = tuple(a.shape for a in params.arrays)
    if shapes != tuple(g.shape for g in grads.arrays) or shapes != st.shapes:
        raise ValueError("gradient, parameter and moment shapes differ")
    theta = np.concatenate([a.ravel() for a in params.arrays])
    g = np.concatenate([a.ravel() for a in grads.arrays])
    t = st.t + 1
    m = st.beta1 * st.m
    m += (1.0 - st.beta1) * g
    v = st.beta2 * st.v
    v += (1.0 - st.beta2) * (g * g)
    # bias corrections m/(1-b1^t) and v/(1-b2^t) applied elementwise
    step = (m / (1.0 - st.beta1**t)) / (np.sqrt(v / (1.0 - st.beta2**t)) + st.eps)
    step *= st.lr
    theta -= step
    new_state = AdamState(m, v, shapes, t, st.lr, st.beta1, st.beta2, st.eps)
    return params.with_arrays(_unflatten(theta, shapes)), new_state


# ---------------------------------------------------------------- checkpoints

MAGIC = b"SDCKPT\x00\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path: str | Path, params, meta: dict | None = None) -> None:
    """Write ``MAGIC | u32 version | u32 manifest length | manifest json | float64 blocks``."""
    manifest = {
        "kind": params.kind,
        "alpha": params.alpha,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in zip(params.names, params.arrays)],
        "meta": meta or {},
    }
    if params.kind == "rnn":
        manifest["horizon"] = params.horizon
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for a in params.arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path: str | Path):
    """Read a checkpoint; returns ``(params, meta)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, n = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(data[16 : 16 + n])
    offset = 16 + n
    arrays = []
    for spec in manifest["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated parameter block {spec['name']}")
        arrays.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(spec["shape"]).copy())
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameter blocks")
    if manifest["kind"] == "mlp":
        params = NetworkParams(tuple(arrays[0::2]), tuple(arrays[1::2]), manifest["alpha"])
    elif manifest["kind"] == "rnn":
        params = RnnParams(*arrays, horizon=manifest["horizon"], alpha=manifest["alpha"])
    else:
        raise CheckpointError(f"{path}: unknown network kind {manifest['kind']!r}")
    return params, manifest["meta"]
