"""Minimal feed-forward network machinery with analytic gradients.

One-hidden-layer ReLU encoders/decoders are all the experiments need, so this
stays deliberately small: explicit parameter containers, hand-written forward
and backward passes, bias-corrected Adam, and global-norm gradient clipping.
All arithmetic is float64; the ReLU subgradient at exactly 0 is taken as 0.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NumericalFailure

_ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray  # out
    activation: str


@dataclass(frozen=True)
class MlpParams:
    layers: tuple
    rng_seed: int

    @property
    def dims(self):
        return [self.layers[0].weight.shape[1]] + [
            l.weight.shape[0] for l in self.layers
        ]

    @property
    def activations(self):
        return [l.activation for l in self.layers]


def init_params(dims, activations=None, seed=0):
    """Fan-in uniform init: W, b ~ U(-1/sqrt(in), 1/sqrt(in)), per layer."""
    if len(dims) < 2:
        raise InvalidInput("need at least an input and an output width")
    if activations is None:
        activations = ["relu"] * (len(dims) - 2) + ["linear"]
    if len(activations) != len(dims) - 1:
        raise InvalidInput("one activation per layer expected")
    for act in activations:
        if act not in _ACTIVATIONS:
            raise InvalidInput(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Layer(weight=w, bias=b, activation=act))
    return MlpParams(layers=tuple(layers), rng_seed=int(seed))


def forward(params, x):
    """Forward pass; returns (output, cache) with cache feeding :func:`backward`."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.dims[0]:
        raise InvalidInput(
            f"input shape {x.shape} does not match first layer width {params.dims[0]}"
        )
    cache = []
    h = x
    for layer in params.layers:
        pre = h @ layer.weight.T + layer.bias
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    if not np.all(np.isfinite(h)):
        raise NumericalFailure("forward pass produced non-finite values")
    return h, cache


def backward(params, cache, upstream_grad):
    """Exact reverse-mode gradients.

    Returns (per-layer [(dW, db), ...], gradient w.r.t. the input batch).
    """
    if len(cache) != len(params.layers):
        raise InvalidInput("cache does not match the network depth")
    g = np.asarray(upstream_grad, dtype=float)
    if g.shape[1] != params.dims[-1]:
        raise InvalidInput("upstream gradient width does not match the output layer")
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        h_in, pre = cache[i]
        if g.shape[0] != h_in.shape[0]:
            raise InvalidInput("cache batch size does not match upstream gradient")
        if layer.activation == "relu":
            g = g * (pre > 0.0)
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        g = g @ layer.weight
    return grads, g


@dataclass(frozen=True)
class AdamState:
    first_moment: tuple
    second_moment: tuple
    step_count: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam_state(params, beta1=0.9, beta2=0.999, epsilon=1e-8):
    zeros = tuple(
        (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers
    )
    return AdamState(
        first_moment=zeros,
        second_moment=tuple(
            (np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers
        ),
        step_count=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update; returns (new params, new state)."""
    if lr <= 0:
        raise InvalidInput(f"learning rate must be > 0, got {lr}")
    if len(grads) != len(params.layers):
        raise InvalidInput("gradient list does not match the network depth")
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_layers, new_m, new_v = [], [], []
    for layer, (gw, gb), (mw, mb), (vw, vb) in zip(
        params.layers, grads, state.first_moment, state.second_moment
    ):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise InvalidInput("gradient shapes do not match parameter shapes")
        mw = b1 * mw + (1 - b1) * gw
        mb = b1 * mb + (1 - b1) * gb
        vw = b2 * vw + (1 - b2) * gw**2
        vb = b2 * vb + (1 - b2) * gb**2
        corr1 = 1 - b1**t
        corr2 = 1 - b2**t
        w = layer.weight - lr * (mw / corr1) / (np.sqrt(vw / corr2) + eps)
        b = layer.bias - lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericalFailure("Adam update produced non-finite parameters")
        new_layers.append(Layer(weight=w, bias=b, activation=layer.activation))
        new_m.append((mw, mb))
        new_v.append((vw, vb))
    return (
        MlpParams(layers=tuple(new_layers), rng_seed=params.rng_seed),
        AdamState(
            first_moment=tuple(new_m),
            second_moment=tuple(new_v),
            step_count=t,
            beta1=b1,
            beta2=b2,
            epsilon=eps,
        ),
    )


def global_grad_norm(grads):
    """L2 norm over every entry of a per-layer gradient list."""
    sq = 0.0
    for gw, gb in grads:
        sq += float(np.sum(gw**2)) + float(np.sum(gb**2))
    return np.sqrt(sq)


def clip_grad_norm(grads, max_norm):
    """Scale all gradients uniformly so the global L2 norm is <= max_norm."""
    if max_norm <= 0:
        raise InvalidInput(f"max_norm must be > 0, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [(gw * scale, gb * scale) for gw, gb in grads]


# --- serialization: JSON header + little-endian float64 payload ------------
#
# Layout: 8-byte LE uint64 header length, UTF-8 JSON header
# {"dims": [...], "activations": [...], "seed": int}, then for each layer the
# weight matrix (row-major) followed by the bias vector, all float64 LE.


def dump_params(params):
    """Serialize to bytes."""
    header = json.dumps(
        {
            "dims": params.dims,
            "activations": params.activations,
            "seed": params.rng_seed,
        }
    ).encode("utf-8")
    chunks = [struct.pack("<Q", len(header)), header]
    for layer in params.layers:
        chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(chunks)


def parse_params(blob, offset=0):
    """Inverse of :func:`dump_params`; returns (MlpParams, bytes consumed)."""
    (header_len,) = struct.unpack_from("<Q", blob, offset)
    pos = offset + 8
    header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    dims = header["dims"]
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], header["activations"]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=pos)
        pos += 8 * fan_out * fan_in
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * fan_out
        layers.append(
            Layer(weight=w.reshape(fan_out, fan_in).copy(), bias=b.copy(), activation=act)
        )
    return MlpParams(layers=tuple(layers), rng_seed=int(header["seed"])), pos - offset


def save_params(params, path):
    with open(path, "wb") as fh:
        fh.write(dump_params(params))


def load_params(path):
    with open(path, "rb") as fh:
        params, _ = parse_params(fh.read())
    return params
